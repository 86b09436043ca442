//! The seven subcommands. Each returns the process exit code: 0 for a clean
//! run, 2 when outputs were written but a solver convergence flag is set.

use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result, anyhow, bail};
use specseg::basis::{build_design, make_basis_with_margin};
use specseg::io::{
    self, DetectReport, FitReport, MctestReport, RecoveryFile, SegmentReport, SimTruth,
};
use specseg::{
    AreaTable, CountTable, DesignMatrix, EffectSize, ExposureCurve, build_exposure, detect,
    fit_segment, make_preset, permutation_test, preset_names, run_recovery_experiment,
    simulate_counts,
};

use crate::config::{
    BasisFlags, DEFAULT_ALPHA, DEFAULT_N_SIM, FileConfig, require_seed, resolve_basis,
    resolve_grid, resolve_search,
};
use crate::{BinArgs, BenchArgs, DetectArgs, ExportPlotsArgs, FitArgs, MctestArgs, SimulateArgs};

/// Command-line face of the generator effect size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EffectArg {
    Strong,
    Weak,
}

impl From<EffectArg> for EffectSize {
    fn from(e: EffectArg) -> Self {
        match e {
            EffectArg::Strong => EffectSize::Strong,
            EffectArg::Weak => EffectSize::Weak,
        }
    }
}

fn wall_ms(start: Instant, timing: bool) -> Option<f64> {
    timing.then(|| start.elapsed().as_secs_f64() * 1e3)
}

/// Table plus exposure plus the design built for the table's grid.
fn load_inputs(
    table: &Path,
    exposure: &Path,
    basis: &BasisFlags,
    file: &FileConfig,
) -> Result<(CountTable, ExposureCurve, DesignMatrix)> {
    let table = io::read_table_csv(table)
        .with_context(|| format!("reading count table {}", table.display()))?;
    let exposure = io::read_exposure_csv(exposure)
        .with_context(|| format!("reading exposure {}", exposure.display()))?;
    exposure.validate_against(&table.grid)?;
    let (n_knots, margin) = resolve_basis(basis, file);
    let cfg = make_basis_with_margin(table.grid.w_lo, table.grid.w_hi, n_knots, margin)?;
    let design = build_design(&cfg, &table.grid)?;
    Ok((table, exposure, design))
}

pub fn run_bin(args: &BinArgs, file: &FileConfig) -> Result<u8> {
    let grid = resolve_grid(&args.grid, file)?;
    let outcome = io::bin_events_file(&args.events, &grid)
        .with_context(|| format!("binning {}", args.events.display()))?;
    let exposure = if args.area.is_empty() {
        ExposureCurve::uniform(&grid)
    } else {
        let areas = args
            .area
            .iter()
            .map(|p| {
                io::read_area_csv(p).with_context(|| format!("reading area {}", p.display()))
            })
            .collect::<Result<Vec<AreaTable>>>()?;
        build_exposure(&areas, &grid)?
    };
    io::write_table_csv(&outcome.table, &args.out)?;
    let exposure_path = args.out.with_extension("exposure.csv");
    io::write_exposure_csv(&exposure, &exposure_path)?;
    println!(
        "binned {} events onto a {} x {} grid ({} dropped); wrote {} and {}",
        outcome.n_retained,
        grid.n_wavelength,
        grid.n_time,
        outcome.n_dropped,
        args.out.display(),
        exposure_path.display(),
    );
    Ok(0)
}

pub fn run_fit(args: &FitArgs, file: &FileConfig, timing: bool) -> Result<u8> {
    let start = Instant::now();
    let (table, exposure, design) = load_inputs(&args.table, &args.exposure, &args.basis, file)?;
    let opts = resolve_search(&args.search, file)?;
    let fit = fit_segment(&table, &exposure, &design, 0..table.grid.n_time, &opts)?;
    let report = FitReport {
        format: io::FORMAT_TAG.into(),
        grid: table.grid.clone(),
        basis: design.config.clone(),
        options: opts,
        segment: SegmentReport::from_fit(&fit, &design),
        wall_ms: wall_ms(start, timing),
    };
    io::write_json(&report, &args.out)?;
    println!(
        "single-segment fit: mdl {:.6} with {} parameters; wrote {}",
        report.segment.score.value,
        report.segment.score.l0_theta,
        args.out.display(),
    );
    Ok(if report.segment.n_unconverged > 0 { 2 } else { 0 })
}

pub fn run_detect(args: &DetectArgs, file: &FileConfig, timing: bool) -> Result<u8> {
    let start = Instant::now();
    let (table, exposure, design) = load_inputs(&args.table, &args.exposure, &args.basis, file)?;
    let opts = resolve_search(&args.search, file)?;
    let model = detect(&table, &exposure, &design, &opts)?;
    let mut report = DetectReport::from_model(&model, &table.grid, &design, &opts);
    report.wall_ms = wall_ms(start, timing);
    io::write_json(&report, &args.out)?;
    println!(
        "{} segment(s), boundaries {:?}, mdl {:.6}; wrote {}",
        model.b(),
        report.boundaries,
        report.score.value,
        args.out.display(),
    );
    Ok(if unconverged(&report) { 2 } else { 0 })
}

pub fn run_mctest(args: &MctestArgs, file: &FileConfig, timing: bool) -> Result<u8> {
    let start = Instant::now();
    let seed = require_seed(args.seed, file)?;
    let n_sim = args.n_sim.or(file.test.n_sim).unwrap_or(DEFAULT_N_SIM);
    let alpha = args.alpha.or(file.test.alpha).unwrap_or(DEFAULT_ALPHA);
    if !(alpha > 0.0 && alpha < 1.0) {
        bail!("alpha must lie strictly between 0 and 1, got {alpha}");
    }
    let (table, exposure, design) = load_inputs(&args.table, &args.exposure, &args.basis, file)?;
    let opts = resolve_search(&args.search, file)?;
    let model = detect(&table, &exposure, &design, &opts)?;
    let test = permutation_test(&table, &exposure, &design, &opts, n_sim, seed)?;
    let base = DetectReport::from_model(&model, &table.grid, &design, &opts);
    let mut report = MctestReport::new(&test, base);
    report.wall_ms = wall_ms(start, timing);
    io::write_json(&report, &args.out)?;
    println!(
        "p = {:.4} from {} replicates (m* = {:.6}); change points at alpha {}: {}; wrote {}",
        test.p_value,
        n_sim,
        test.m_star,
        alpha,
        if test.reject(alpha) { "supported" } else { "not supported" },
        args.out.display(),
    );
    Ok(if unconverged(&report.base) { 2 } else { 0 })
}

pub fn run_simulate(args: &SimulateArgs, file: &FileConfig) -> Result<u8> {
    if args.list {
        for name in preset_names() {
            println!("{name}");
        }
        return Ok(0);
    }
    // Both are enforced by clap when --list is absent.
    let preset = args.preset.as_deref().expect("preset is required");
    let out_dir = args.out_dir.as_deref().expect("out_dir is required");
    let seed = require_seed(args.seed, file)?;
    let tf = make_preset(preset, args.effect.into())?;
    let table = simulate_counts(&tf, seed)?;
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    io::write_table_csv(&table, &out_dir.join("table.csv"))?;
    io::write_exposure_csv(&tf.exposure, &out_dir.join("exposure.csv"))?;
    let truth = SimTruth {
        format: io::FORMAT_TAG.into(),
        preset: Some(preset.to_string()),
        seed,
        truth: tf.clone(),
    };
    io::write_json(&truth, &out_dir.join("truth.json"))?;
    println!(
        "simulated {preset}: {} x {} table with {} segment(s), total count {}; wrote {}",
        table.grid.n_wavelength,
        table.grid.n_time,
        tf.b(),
        table.total(),
        out_dir.display(),
    );
    Ok(0)
}

pub fn run_bench(args: &BenchArgs, file: &FileConfig, timing: bool) -> Result<u8> {
    let start = Instant::now();
    let seed = require_seed(args.seed, file)?;
    let opts = resolve_search(&args.search, file)?;
    let tf = make_preset(&args.preset, args.effect.into())?;
    let report = run_recovery_experiment(&tf, &opts, args.replicates, seed)?;
    let out = RecoveryFile {
        format: io::FORMAT_TAG.into(),
        preset: Some(args.preset.clone()),
        options: opts,
        truth_boundaries: tf.boundaries.clone(),
        report,
        wall_ms: wall_ms(start, timing),
    };
    io::write_json(&out, &args.out)?;
    let rmse = match out.report.rmse_boundaries {
        Some(r) => format!("{r:.4} time bins"),
        None => "undefined (no correct replicate)".into(),
    };
    println!(
        "{}: {:.1}% correct segment count over {} replicates, boundary rmse {}; wrote {}",
        args.preset,
        out.report.percent_correct_b,
        out.report.n_replicates,
        rmse,
        args.out.display(),
    );
    Ok(0)
}

pub fn run_export_plots(args: &ExportPlotsArgs) -> Result<u8> {
    let value: serde_json::Value = io::read_json(&args.result)
        .with_context(|| format!("reading result {}", args.result.display()))?;
    // An mctest file wraps the detection under `base`.
    let report: DetectReport = if value.get("base").is_some() {
        let m: MctestReport = serde_json::from_value(value)?;
        m.base
    } else {
        serde_json::from_value(value)?
    };
    if report.segments.is_empty() {
        bail!("result file has no fitted segments to export");
    }
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let centers = report.grid.wavelength_centers();
    for (k, seg) in report.segments.iter().enumerate() {
        let path = args.out_dir.join(format!("spectrum_{k:02}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["wavelength", "lambda"])?;
        for (c, l) in centers.iter().zip(&seg.spectrum) {
            w.write_record([c.to_string(), l.to_string()])?;
        }
        w.flush()?;
    }
    let heat_path = args.out_dir.join("heatmap.csv");
    let mut w = csv::Writer::from_path(&heat_path)?;
    for i in 0..report.grid.n_wavelength {
        let row: Vec<String> = (0..report.grid.n_time)
            .map(|j| {
                let seg = report
                    .segments
                    .iter()
                    .find(|s| s.start <= j && j < s.end)
                    .ok_or_else(|| anyhow!("no segment covers time bin {j}"))?;
                Ok(seg.spectrum[i].to_string())
            })
            .collect::<Result<_>>()?;
        w.write_record(&row)?;
    }
    w.flush()?;
    println!(
        "wrote {} spectrum file(s) and {} to {}",
        report.segments.len(),
        heat_path.display(),
        args.out_dir.display(),
    );
    Ok(0)
}

fn unconverged(report: &DetectReport) -> bool {
    report.segments.iter().any(|s| s.n_unconverged > 0)
}
