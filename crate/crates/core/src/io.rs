//! File formats.
//!
//! Inputs are CSV: photon events (`time,wavelength,detector`), effective
//! area tables (`wavelength,area`), and exposure curves (`bin,s`). A count
//! table is stored as a headerless CSV matrix (rows are wavelength bins,
//! columns time bins) with its grid in a `.grid.json` sidecar next to it.
//!
//! Results are JSON, written in canonical form: fixed field order, no
//! maps, pretty-printed with a trailing newline. Equal results serialize
//! to identical bytes, so reruns of a seeded command can be compared with
//! a plain file diff. Wall-clock timing is therefore opt-in and absent by
//! default.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize, de::DeserializeOwned};

use crate::basis::{BasisConfig, DesignMatrix};
use crate::data::{
    AreaTable, BinGrid, BinOutcome, CountTable, EventList, ExposureCurve, PhotonEvent, bin_events,
};
use crate::error::{Error, Result};
use crate::lasso::Coefficients;
use crate::mdl::{MdlFullScore, MdlNullScore};
use crate::permtest::PermTestResult;
use crate::search::ChangePointModel;
use crate::segment::{SearchOptions, SegmentFit, predict_spectrum};
use crate::sim::{RecoveryReport, TestFunction};

/// Format marker carried by every result file.
pub const FORMAT_TAG: &str = "specseg.v1";

/// Serializes any result value in canonical form.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Writes canonical JSON to a file.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    std::fs::write(path, to_canonical_json(value)?)?;
    Ok(())
}

/// Reads a JSON file written by [`write_json`].
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn parse_field<T: std::str::FromStr>(record: &csv::StringRecord, idx: usize, row: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let raw = record.get(idx).ok_or(Error::Parse {
        row,
        message: format!("missing column {idx}"),
    })?;
    raw.trim().parse().map_err(|e| Error::Parse {
        row,
        message: format!("column {idx}: {e}"),
    })
}

/// Reads photon events from CSV with header `time,wavelength,detector`.
pub fn read_events_csv(path: &Path) -> Result<Vec<PhotonEvent>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let expected = ["time", "wavelength", "detector"];
    for (k, name) in expected.iter().enumerate() {
        if headers.get(k).map(str::trim) != Some(*name) {
            return Err(Error::Parse {
                row: 0,
                message: format!("expected header 'time,wavelength,detector', got '{headers:?}'"),
            });
        }
    }
    let mut events = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record?;
        let row = k + 1;
        events.push(PhotonEvent {
            time: parse_field(&record, 0, row)?,
            wavelength: parse_field(&record, 1, row)?,
            detector: parse_field(&record, 2, row)?,
        });
    }
    Ok(events)
}

/// Reads events and bins them onto `grid`. Events outside the grid extent
/// are dropped and counted in the outcome, not treated as errors.
pub fn bin_events_file(path: &Path, grid: &BinGrid) -> Result<BinOutcome> {
    let raw = read_events_csv(path)?;
    let n_detectors = raw.iter().map(|e| e.detector + 1).max().unwrap_or(1);
    let mut kept = Vec::with_capacity(raw.len());
    let mut n_outside = 0usize;
    for ev in raw {
        if ev.time >= grid.t_lo && ev.time < grid.t_hi && ev.wavelength > 0.0 {
            kept.push(ev);
        } else {
            n_outside += 1;
        }
    }
    let list = EventList::new(kept, grid.t_lo, grid.t_hi, n_detectors)?;
    let mut outcome = bin_events(&list, grid);
    outcome.n_dropped += n_outside;
    Ok(outcome)
}

/// Reads an effective area table from CSV with header `wavelength,area`.
pub fn read_area_csv(path: &Path) -> Result<AreaTable> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.get(0).map(str::trim) != Some("wavelength")
        || headers.get(1).map(str::trim) != Some("area")
    {
        return Err(Error::Parse {
            row: 0,
            message: format!("expected header 'wavelength,area', got '{headers:?}'"),
        });
    }
    let mut wavelengths = Vec::new();
    let mut areas = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record?;
        let row = k + 1;
        wavelengths.push(parse_field(&record, 0, row)?);
        areas.push(parse_field(&record, 1, row)?);
    }
    AreaTable::new(wavelengths, areas)
}

/// Writes an exposure curve as CSV with header `bin,s`.
pub fn write_exposure_csv(exposure: &ExposureCurve, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["bin", "s"])?;
    for (i, &s) in exposure.s.iter().enumerate() {
        writer.write_record([i.to_string(), format!("{s}")])?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads an exposure curve written by [`write_exposure_csv`].
pub fn read_exposure_csv(path: &Path) -> Result<ExposureCurve> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut s = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record?;
        let row = k + 1;
        let idx: usize = parse_field(&record, 0, row)?;
        if idx != s.len() {
            return Err(Error::Parse {
                row,
                message: format!("bin indices must be consecutive from 0, got {idx}"),
            });
        }
        s.push(parse_field(&record, 1, row)?);
    }
    ExposureCurve::from_values(s)
}

/// Sidecar path holding the grid of a count table stored at `path`.
pub fn grid_sidecar(path: &Path) -> PathBuf {
    path.with_extension("grid.json")
}

/// Writes a count table as a headerless CSV matrix plus its grid sidecar.
pub fn write_table_csv(table: &CountTable, path: &Path) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for i in 0..table.grid.n_wavelength {
        let row: Vec<String> = (0..table.grid.n_time)
            .map(|j| table.counts[[i, j]].to_string())
            .collect();
        writer.write_record(&row)?;
    }
    writer.flush()?;
    write_json(&table.grid, &grid_sidecar(path))?;
    Ok(())
}

/// Reads a count table written by [`write_table_csv`], checking the matrix
/// shape against the sidecar grid.
pub fn read_table_csv(path: &Path) -> Result<CountTable> {
    let grid: BinGrid = read_json(&grid_sidecar(path))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut values = Vec::new();
    let mut n_rows = 0usize;
    for (k, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != grid.n_time {
            return Err(Error::Parse {
                row: k + 1,
                message: format!(
                    "expected {} columns per the sidecar grid, got {}",
                    grid.n_time,
                    record.len()
                ),
            });
        }
        for idx in 0..record.len() {
            values.push(parse_field::<u64>(&record, idx, k + 1)?);
        }
        n_rows += 1;
    }
    if n_rows != grid.n_wavelength {
        return Err(Error::Mismatch(format!(
            "table has {n_rows} rows, sidecar grid expects {}",
            grid.n_wavelength
        )));
    }
    let counts = Array2::from_shape_vec((n_rows, grid.n_time), values)
        .expect("shape checked row by row");
    CountTable::new(grid, counts)
}

/// One fitted segment as stored in result files: bounds, selected penalty,
/// coefficients, score, and the predicted spectrum on the full grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub start: usize,
    pub end: usize,
    pub c: usize,
    pub gamma: f64,
    pub rho: f64,
    pub coef: Coefficients,
    pub score: MdlNullScore,
    pub spectrum: Vec<f64>,
    pub n_unconverged: usize,
}

impl SegmentReport {
    pub fn from_fit(fit: &SegmentFit, design: &DesignMatrix) -> Self {
        Self {
            start: fit.start,
            end: fit.end,
            c: fit.c,
            gamma: fit.penalty.gamma,
            rho: fit.penalty.rho,
            coef: fit.coef.clone(),
            score: fit.score,
            spectrum: predict_spectrum(&fit.coef, design),
            n_unconverged: fit.n_unconverged,
        }
    }
}

/// Result of a single-segment fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub format: String,
    pub grid: BinGrid,
    pub basis: BasisConfig,
    pub options: SearchOptions,
    pub segment: SegmentReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<f64>,
}

/// Result of a change-point detection run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectReport {
    pub format: String,
    pub grid: BinGrid,
    pub basis: BasisConfig,
    pub options: SearchOptions,
    pub boundaries: Vec<usize>,
    pub score: MdlFullScore,
    pub trace: Vec<f64>,
    pub segments: Vec<SegmentReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<f64>,
}

impl DetectReport {
    pub fn from_model(
        model: &ChangePointModel,
        grid: &BinGrid,
        design: &DesignMatrix,
        options: &SearchOptions,
    ) -> Self {
        Self {
            format: FORMAT_TAG.into(),
            grid: grid.clone(),
            basis: design.config.clone(),
            options: options.clone(),
            boundaries: model.boundaries.clone(),
            score: model.score,
            trace: model.trace.clone(),
            segments: model
                .fits
                .iter()
                .map(|f| SegmentReport::from_fit(f, design))
                .collect(),
            wall_ms: None,
        }
    }
}

/// Result of a permutation significance test, wrapping the base detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MctestReport {
    pub format: String,
    pub n_sim: usize,
    pub seed: u64,
    pub m_star: f64,
    pub p_value: f64,
    pub replicates: Vec<f64>,
    pub base: DetectReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<f64>,
}

impl MctestReport {
    pub fn new(test: &PermTestResult, base: DetectReport) -> Self {
        Self {
            format: FORMAT_TAG.into(),
            n_sim: test.n_sim,
            seed: test.seed,
            m_star: test.m_star,
            p_value: test.p_value,
            replicates: test.replicates.clone(),
            base,
            wall_ms: None,
        }
    }
}

/// Ground truth emitted alongside a simulated count table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub format: String,
    pub preset: Option<String>,
    pub seed: u64,
    pub truth: TestFunction,
}

/// Result of a recovery experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryFile {
    pub format: String,
    pub preset: Option<String>,
    pub options: SearchOptions,
    pub truth_boundaries: Vec<usize>,
    pub report: RecoveryReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<f64>,
}
