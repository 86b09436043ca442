//! Event lists, wavelength-time binning, and per-bin exposure.
//!
//! Photon events are binned onto a regular grid: wavelength bin `i` covers
//! `[w_lo + i*delta_w, w_lo + (i+1)*delta_w)` and time bin `j` covers
//! `[t_lo + j*delta_t, t_lo + (j+1)*delta_t)`, both half-open. Exposure
//! factors `s_i = delta_t * delta_w * sum_k mean_area_k(bin i)` convert a
//! spectral intensity into an expected count per bin.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Regular wavelength-time grid.
///
/// Bin counts are derived from the requested extents by rounding
/// `(hi - lo) / delta` to the nearest integer; the covered extent is
/// `lo + n * delta`, which may differ from `hi` by up to half a bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinGrid {
    pub w_lo: f64,
    pub w_hi: f64,
    pub delta_w: f64,
    pub t_lo: f64,
    pub t_hi: f64,
    pub delta_t: f64,
    pub n_wavelength: usize,
    pub n_time: usize,
}

impl BinGrid {
    pub fn new(
        w_lo: f64,
        w_hi: f64,
        delta_w: f64,
        t_lo: f64,
        t_hi: f64,
        delta_t: f64,
    ) -> Result<Self> {
        let n_wavelength = derive_bin_count(w_lo, w_hi, delta_w, "wavelength")?;
        let n_time = derive_bin_count(t_lo, t_hi, delta_t, "time")?;
        Ok(Self {
            w_lo,
            w_hi,
            delta_w,
            t_lo,
            t_hi,
            delta_t,
            n_wavelength,
            n_time,
        })
    }

    /// Re-checks invariants after deserialization.
    pub fn validate(&self) -> Result<()> {
        let grid = Self::new(
            self.w_lo,
            self.w_hi,
            self.delta_w,
            self.t_lo,
            self.t_hi,
            self.delta_t,
        )?;
        if grid.n_wavelength != self.n_wavelength || grid.n_time != self.n_time {
            return Err(Error::InvalidGrid(format!(
                "stored bin counts ({}, {}) disagree with extents ({}, {})",
                self.n_wavelength, self.n_time, grid.n_wavelength, grid.n_time
            )));
        }
        Ok(())
    }

    /// Upper edge of the last wavelength bin.
    pub fn w_extent(&self) -> f64 {
        self.w_lo + self.n_wavelength as f64 * self.delta_w
    }

    /// Upper edge of the last time bin.
    pub fn t_extent(&self) -> f64 {
        self.t_lo + self.n_time as f64 * self.delta_t
    }

    pub fn wavelength_centers(&self) -> Vec<f64> {
        (0..self.n_wavelength)
            .map(|i| self.w_lo + (i as f64 + 0.5) * self.delta_w)
            .collect()
    }

    pub fn time_centers(&self) -> Vec<f64> {
        (0..self.n_time)
            .map(|j| self.t_lo + (j as f64 + 0.5) * self.delta_t)
            .collect()
    }

    fn w_index(&self, w: f64) -> Option<usize> {
        bin_index(w, self.w_lo, self.delta_w, self.n_wavelength)
    }

    fn t_index(&self, t: f64) -> Option<usize> {
        bin_index(t, self.t_lo, self.delta_t, self.n_time)
    }
}

fn derive_bin_count(lo: f64, hi: f64, delta: f64, axis: &str) -> Result<usize> {
    if !lo.is_finite() || !hi.is_finite() || !delta.is_finite() {
        return Err(Error::InvalidGrid(format!("non-finite {axis} extents")));
    }
    if delta <= 0.0 {
        return Err(Error::InvalidGrid(format!(
            "{axis} bin width must be positive, got {delta}"
        )));
    }
    if hi <= lo {
        return Err(Error::InvalidGrid(format!(
            "{axis} range [{lo}, {hi}] is empty"
        )));
    }
    let n = ((hi - lo) / delta).round();
    if n < 1.0 {
        return Err(Error::InvalidGrid(format!(
            "{axis} range [{lo}, {hi}] is narrower than half a bin of width {delta}"
        )));
    }
    Ok(n as usize)
}

fn bin_index(x: f64, lo: f64, delta: f64, n: usize) -> Option<usize> {
    if !x.is_finite() || x < lo {
        return None;
    }
    let idx = ((x - lo) / delta).floor();
    if idx >= 0.0 && (idx as usize) < n {
        Some(idx as usize)
    } else {
        None
    }
}

/// A single detected photon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhotonEvent {
    pub time: f64,
    pub wavelength: f64,
    pub detector: usize,
}

/// Validated photon events from `n_detectors` detectors observed over
/// `[t_start, t_end)`.
#[derive(Debug, Clone)]
pub struct EventList {
    pub events: Vec<PhotonEvent>,
    pub t_start: f64,
    pub t_end: f64,
    pub n_detectors: usize,
}

impl EventList {
    pub fn new(
        events: Vec<PhotonEvent>,
        t_start: f64,
        t_end: f64,
        n_detectors: usize,
    ) -> Result<Self> {
        if !(t_start.is_finite() && t_end.is_finite() && t_start < t_end) {
            return Err(Error::InvalidEvents(format!(
                "observation window [{t_start}, {t_end}) is empty or non-finite"
            )));
        }
        if n_detectors == 0 {
            return Err(Error::InvalidEvents("detector count must be >= 1".into()));
        }
        for (idx, ev) in events.iter().enumerate() {
            if !ev.time.is_finite() || ev.time < t_start || ev.time >= t_end {
                return Err(Error::InvalidEvents(format!(
                    "event {idx}: time {} outside window [{t_start}, {t_end})",
                    ev.time
                )));
            }
            if !ev.wavelength.is_finite() || ev.wavelength <= 0.0 {
                return Err(Error::InvalidEvents(format!(
                    "event {idx}: wavelength {} must be positive and finite",
                    ev.wavelength
                )));
            }
            if ev.detector >= n_detectors {
                return Err(Error::InvalidEvents(format!(
                    "event {idx}: detector {} out of range (have {n_detectors})",
                    ev.detector
                )));
            }
        }
        Ok(Self {
            events,
            t_start,
            t_end,
            n_detectors,
        })
    }
}

/// Counts per (wavelength bin, time bin), summed over detectors.
#[derive(Debug, Clone, PartialEq)]
pub struct CountTable {
    pub grid: BinGrid,
    /// Shape `(n_wavelength, n_time)`.
    pub counts: Array2<u64>,
}

/// Result of binning an event list, with the number of events that fell
/// outside the grid.
#[derive(Debug, Clone)]
pub struct BinOutcome {
    pub table: CountTable,
    pub n_retained: usize,
    pub n_dropped: usize,
}

/// Bins events onto `grid`. Events outside the covered extent are dropped
/// and reported, not errors.
pub fn bin_events(events: &EventList, grid: &BinGrid) -> BinOutcome {
    let mut counts = Array2::<u64>::zeros((grid.n_wavelength, grid.n_time));
    let mut n_retained = 0usize;
    let mut n_dropped = 0usize;
    for ev in &events.events {
        match (grid.w_index(ev.wavelength), grid.t_index(ev.time)) {
            (Some(i), Some(j)) => {
                counts[[i, j]] += 1;
                n_retained += 1;
            }
            _ => n_dropped += 1,
        }
    }
    BinOutcome {
        table: CountTable {
            grid: grid.clone(),
            counts,
        },
        n_retained,
        n_dropped,
    }
}

impl CountTable {
    pub fn new(grid: BinGrid, counts: Array2<u64>) -> Result<Self> {
        if counts.dim() != (grid.n_wavelength, grid.n_time) {
            return Err(Error::Mismatch(format!(
                "count table shape {:?} does not match grid ({}, {})",
                counts.dim(),
                grid.n_wavelength,
                grid.n_time
            )));
        }
        Ok(Self { grid, counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Per-wavelength-bin sums over time columns `cols`.
    pub fn collapse_columns(&self, cols: std::ops::Range<usize>) -> Vec<u64> {
        assert!(cols.end <= self.grid.n_time, "column range out of bounds");
        (0..self.grid.n_wavelength)
            .map(|i| cols.clone().map(|j| self.counts[[i, j]]).sum())
            .collect()
    }

    /// Aggregates `w_factor x t_factor` blocks of bins into coarser bins.
    /// Both factors must divide the current bin counts exactly.
    pub fn rebin(&self, w_factor: usize, t_factor: usize) -> Result<CountTable> {
        if w_factor == 0 || t_factor == 0 {
            return Err(Error::InvalidGrid("rebin factors must be >= 1".into()));
        }
        if self.grid.n_wavelength % w_factor != 0 || self.grid.n_time % t_factor != 0 {
            return Err(Error::InvalidGrid(format!(
                "rebin factors ({w_factor}, {t_factor}) do not divide table shape ({}, {})",
                self.grid.n_wavelength, self.grid.n_time
            )));
        }
        let n_w = self.grid.n_wavelength / w_factor;
        let n_t = self.grid.n_time / t_factor;
        let mut counts = Array2::<u64>::zeros((n_w, n_t));
        for i in 0..self.grid.n_wavelength {
            for j in 0..self.grid.n_time {
                counts[[i / w_factor, j / t_factor]] += self.counts[[i, j]];
            }
        }
        let grid = BinGrid {
            w_lo: self.grid.w_lo,
            w_hi: self.grid.w_hi,
            delta_w: self.grid.delta_w * w_factor as f64,
            t_lo: self.grid.t_lo,
            t_hi: self.grid.t_hi,
            delta_t: self.grid.delta_t * t_factor as f64,
            n_wavelength: n_w,
            n_time: n_t,
        };
        CountTable::new(grid, counts)
    }
}

/// Tabulated effective area for one detector, sampled at strictly
/// increasing wavelengths. Interpolation between samples is linear.
#[derive(Debug, Clone)]
pub struct AreaTable {
    wavelengths: Vec<f64>,
    areas: Vec<f64>,
}

impl AreaTable {
    pub fn new(wavelengths: Vec<f64>, areas: Vec<f64>) -> Result<Self> {
        if wavelengths.len() != areas.len() {
            return Err(Error::InvalidExposure(format!(
                "{} wavelengths but {} area values",
                wavelengths.len(),
                areas.len()
            )));
        }
        if wavelengths.len() < 2 {
            return Err(Error::InvalidExposure(
                "area table needs at least two samples".into(),
            ));
        }
        for (idx, pair) in wavelengths.windows(2).enumerate() {
            if !(pair[0].is_finite() && pair[1].is_finite() && pair[0] < pair[1]) {
                return Err(Error::InvalidExposure(format!(
                    "wavelengths must be finite and strictly increasing (samples {idx}, {})",
                    idx + 1
                )));
            }
        }
        for (idx, &a) in areas.iter().enumerate() {
            if !a.is_finite() || a < 0.0 {
                return Err(Error::InvalidExposure(format!(
                    "area at sample {idx} is {a}; must be finite and non-negative"
                )));
            }
        }
        Ok(Self { wavelengths, areas })
    }

    fn covers(&self, lo: f64, hi: f64) -> bool {
        self.wavelengths[0] <= lo && *self.wavelengths.last().unwrap() >= hi
    }

    /// Piecewise-linear area at `w`, clamped to the end values outside the
    /// tabulated range.
    pub fn interpolate(&self, w: f64) -> f64 {
        let k = self.wavelengths.partition_point(|&x| x <= w);
        if k == 0 {
            return self.areas[0];
        }
        if k == self.wavelengths.len() {
            return *self.areas.last().unwrap();
        }
        let (w0, w1) = (self.wavelengths[k - 1], self.wavelengths[k]);
        let (a0, a1) = (self.areas[k - 1], self.areas[k]);
        a0 + (a1 - a0) * (w - w0) / (w1 - w0)
    }

    /// Mean area over `[lo, hi]`: trapezoidal integration of the linear
    /// interpolant over 32 uniform subintervals plus every interior sample
    /// point, which makes the quadrature exact for the interpolant.
    fn bin_mean(&self, lo: f64, hi: f64) -> f64 {
        const SUBSAMPLES: usize = 32;
        let mut points: Vec<f64> = (0..=SUBSAMPLES)
            .map(|k| lo + (hi - lo) * k as f64 / SUBSAMPLES as f64)
            .collect();
        points.extend(
            self.wavelengths
                .iter()
                .copied()
                .filter(|&w| w > lo && w < hi),
        );
        points.sort_by(f64::total_cmp);
        points.dedup();
        let mut integral = 0.0;
        for pair in points.windows(2) {
            let (x0, x1) = (pair[0], pair[1]);
            integral += (x1 - x0) * (self.interpolate(x0) + self.interpolate(x1)) / 2.0;
        }
        integral / (hi - lo)
    }
}

/// Per-wavelength-bin exposure factors `s_i`, with a mask of bins that can
/// enter the likelihood (`s_i > 0`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureCurve {
    pub s: Vec<f64>,
    pub included: Vec<bool>,
}

impl ExposureCurve {
    pub fn from_values(s: Vec<f64>) -> Result<Self> {
        for (idx, &v) in s.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidExposure(format!(
                    "exposure at bin {idx} is {v}; must be finite and non-negative"
                )));
            }
        }
        let included = s.iter().map(|&v| v > 0.0).collect();
        Ok(Self { s, included })
    }

    /// Unit effective area over the whole grid: `s_i = delta_t * delta_w`.
    pub fn uniform(grid: &BinGrid) -> Self {
        let s = vec![grid.delta_t * grid.delta_w; grid.n_wavelength];
        let included = vec![true; grid.n_wavelength];
        Self { s, included }
    }

    pub fn n_included(&self) -> usize {
        self.included.iter().filter(|&&b| b).count()
    }

    pub fn validate_against(&self, grid: &BinGrid) -> Result<()> {
        if self.s.len() != grid.n_wavelength || self.included.len() != grid.n_wavelength {
            return Err(Error::Mismatch(format!(
                "exposure length {} does not match {} wavelength bins",
                self.s.len(),
                grid.n_wavelength
            )));
        }
        for (idx, &v) in self.s.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidExposure(format!(
                    "exposure at bin {idx} is {v}; must be finite and non-negative"
                )));
            }
            if self.included[idx] != (v > 0.0) {
                return Err(Error::InvalidExposure(format!(
                    "inclusion mask at bin {idx} disagrees with exposure {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Builds exposure factors `s_i = delta_t * delta_w * sum_k mean_k(bin i)`
/// from one area table per detector. Every table must cover the full
/// wavelength extent of the grid.
pub fn build_exposure(areas: &[AreaTable], grid: &BinGrid) -> Result<ExposureCurve> {
    if areas.is_empty() {
        return Err(Error::InvalidExposure("no area tables given".into()));
    }
    let extent = grid.w_extent();
    for (k, table) in areas.iter().enumerate() {
        if !table.covers(grid.w_lo, extent) {
            return Err(Error::InvalidExposure(format!(
                "area table {k} spans [{}, {}] but the grid needs [{}, {extent}]",
                table.wavelengths[0],
                table.wavelengths.last().unwrap(),
                grid.w_lo
            )));
        }
    }
    let scale = grid.delta_t * grid.delta_w;
    let s = (0..grid.n_wavelength)
        .map(|i| {
            let lo = grid.w_lo + i as f64 * grid.delta_w;
            let hi = lo + grid.delta_w;
            scale * areas.iter().map(|a| a.bin_mean(lo, hi)).sum::<f64>()
        })
        .collect();
    ExposureCurve::from_values(s)
}
