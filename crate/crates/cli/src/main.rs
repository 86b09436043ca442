//! Command-line driver for spectral change-point detection.
//!
//! Exit codes: 0 on success, 1 on usage or input errors, 2 when the run
//! finished but some penalized fit failed to converge (the output file is
//! still written so the flags can be inspected).

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

mod commands;
mod config;

use config::{BasisFlags, FileConfig, GridFlags, SearchFlags};

#[derive(Parser)]
#[command(name = "specseg", version, about = "Change-point detection for photon-counting spectra")]
struct Cli {
    /// TOML configuration file; command-line flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for candidate scans and test replicates
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Record wall-clock time in the output file
    #[arg(long, global = true)]
    timing: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bin a photon event list onto a wavelength-time grid
    Bin(BinArgs),
    /// Fit the single-segment model to a count table
    Fit(FitArgs),
    /// Search a count table for change points
    Detect(DetectArgs),
    /// Permutation significance test for the detected change points
    Mctest(MctestArgs),
    /// Draw a synthetic count table from a bundled generator
    Simulate(SimulateArgs),
    /// Recovery benchmark: simulate, detect, and score many replicates
    Bench(BenchArgs),
    /// Export fitted spectra and the rate heat map as CSV
    ExportPlots(ExportPlotsArgs),
}

#[derive(clap::Args)]
struct BinArgs {
    /// Event list CSV with header time,wavelength,detector
    #[arg(long)]
    events: PathBuf,
    /// Effective area CSV (wavelength,area); repeat per detector
    #[arg(long)]
    area: Vec<PathBuf>,
    /// Output count table CSV (grid sidecar and exposure go next to it)
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    grid: GridFlags,
}

#[derive(clap::Args)]
struct FitArgs {
    /// Count table CSV written by `bin` or `simulate`
    #[arg(long)]
    table: PathBuf,
    /// Exposure CSV (bin,s)
    #[arg(long)]
    exposure: PathBuf,
    /// Output JSON path
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    basis: BasisFlags,
    #[command(flatten)]
    search: SearchFlags,
}

#[derive(clap::Args)]
struct DetectArgs {
    #[arg(long)]
    table: PathBuf,
    #[arg(long)]
    exposure: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    basis: BasisFlags,
    #[command(flatten)]
    search: SearchFlags,
}

#[derive(clap::Args)]
struct MctestArgs {
    #[arg(long)]
    table: PathBuf,
    #[arg(long)]
    exposure: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Number of permutation replicates
    #[arg(long)]
    n_sim: Option<usize>,
    /// Significance level for the printed verdict
    #[arg(long)]
    alpha: Option<f64>,
    /// RNG seed (required; may come from the config file)
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    basis: BasisFlags,
    #[command(flatten)]
    search: SearchFlags,
}

#[derive(clap::Args)]
struct SimulateArgs {
    /// Generator name, e.g. b2-j21 (see --list)
    #[arg(long, required_unless_present = "list")]
    preset: Option<String>,
    /// Effect size of the between-segment differences
    #[arg(long, value_enum, default_value_t = commands::EffectArg::Strong)]
    effect: commands::EffectArg,
    /// Directory for table.csv, exposure.csv, and truth.json
    #[arg(long, required_unless_present = "list")]
    out_dir: Option<PathBuf>,
    /// RNG seed (required; may come from the config file)
    #[arg(long)]
    seed: Option<u64>,
    /// List the bundled generator names and exit
    #[arg(long)]
    list: bool,
}

#[derive(clap::Args)]
struct BenchArgs {
    /// Generator name, e.g. b2-j21
    #[arg(long)]
    preset: String,
    #[arg(long, value_enum, default_value_t = commands::EffectArg::Strong)]
    effect: commands::EffectArg,
    /// Number of simulated replicates
    #[arg(long, default_value_t = 50)]
    replicates: usize,
    /// Output JSON path
    #[arg(long)]
    out: PathBuf,
    /// RNG seed (required; may come from the config file)
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    search: SearchFlags,
}

#[derive(clap::Args)]
struct ExportPlotsArgs {
    /// Result JSON from `detect` or `mctest`
    #[arg(long)]
    result: PathBuf,
    /// Directory for the spectrum and heat-map CSVs
    #[arg(long)]
    out_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes; everything else is a
            // usage error and exits 1 per the documented codes.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let timing = cli.timing;
    let dispatch = || -> Result<u8> {
        match &cli.command {
            Command::Bin(args) => commands::run_bin(args, &file),
            Command::Fit(args) => commands::run_fit(args, &file, timing),
            Command::Detect(args) => commands::run_detect(args, &file, timing),
            Command::Mctest(args) => commands::run_mctest(args, &file, timing),
            Command::Simulate(args) => commands::run_simulate(args, &file),
            Command::Bench(args) => commands::run_bench(args, &file, timing),
            Command::ExportPlots(args) => commands::run_export_plots(args),
        }
    };
    match cli.threads.or(file.threads) {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()?
            .install(dispatch),
        None => dispatch(),
    }
}
