//! Run configuration.
//!
//! Every tunable can live in a TOML file given with `--config`; flags on the
//! command line override file values field by field. Resolution applies the
//! documented defaults last, so a run is reproducible from the file alone
//! and a flag never silently loses to the file.

use std::path::Path;

use anyhow::{Context, Result, bail};
use serde::Deserialize;
use specseg::{FitOptions, SearchOptions};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub basis: BasisSection,
    #[serde(default)]
    pub search: SearchSection,
    #[serde(default)]
    pub fit: FitSection,
    #[serde(default)]
    pub test: TestSection,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub w_lo: Option<f64>,
    pub w_hi: Option<f64>,
    pub delta_w: Option<f64>,
    pub t_lo: Option<f64>,
    pub t_hi: Option<f64>,
    pub delta_t: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSection {
    pub n_knots: Option<usize>,
    pub knot_margin: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSection {
    pub rho_grid: Option<Vec<f64>>,
    pub n_gamma: Option<usize>,
    pub gamma_min_ratio: Option<f64>,
    pub min_width: Option<usize>,
}

/// Solver tolerances and budgets. File-only: these are not worth flag
/// space, but pipelines still need to pin them.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub outer_tol: Option<f64>,
    pub kkt_tol: Option<f64>,
    pub max_outer: Option<usize>,
    pub max_sweeps: Option<usize>,
    pub weight_floor: Option<f64>,
    pub nonneg_eta: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSection {
    pub n_sim: Option<usize>,
    pub alpha: Option<f64>,
}

/// Flag-side search knobs shared by fit, detect, mctest, and bench.
#[derive(Debug, clap::Args)]
pub struct SearchFlags {
    /// Penalty mixing weights to scan, comma separated, each in (0, 1)
    #[arg(long, value_delimiter = ',')]
    pub rho_grid: Option<Vec<f64>>,
    /// Penalty strengths per path
    #[arg(long)]
    pub n_gamma: Option<usize>,
    /// Smallest penalty as a fraction of the path anchor
    #[arg(long)]
    pub gamma_min_ratio: Option<f64>,
    /// Smallest admissible segment width, in time bins
    #[arg(long)]
    pub min_width: Option<usize>,
}

#[derive(Debug, clap::Args)]
pub struct BasisFlags {
    /// Number of spectral basis functions (4 polynomial + knots)
    #[arg(long)]
    pub n_knots: Option<usize>,
    /// Knot end margin, in units of the knot gap
    #[arg(long)]
    pub knot_margin: Option<f64>,
}

#[derive(Debug, clap::Args)]
pub struct GridFlags {
    /// Lower wavelength edge
    #[arg(long)]
    pub w_lo: Option<f64>,
    /// Upper wavelength edge
    #[arg(long)]
    pub w_hi: Option<f64>,
    /// Wavelength bin width
    #[arg(long)]
    pub delta_w: Option<f64>,
    /// Observation start time
    #[arg(long)]
    pub t_lo: Option<f64>,
    /// Observation end time
    #[arg(long)]
    pub t_hi: Option<f64>,
    /// Time bin width
    #[arg(long)]
    pub delta_t: Option<f64>,
}

pub const DEFAULT_W_LO: f64 = 1.65;
pub const DEFAULT_W_HI: f64 = 30.05;
pub const DEFAULT_DELTA_W: f64 = 0.2;
pub const DEFAULT_DELTA_T: f64 = 2000.0;
pub const DEFAULT_N_KNOTS: usize = 34;
pub const DEFAULT_KNOT_MARGIN: f64 = 1.25;
pub const DEFAULT_N_SIM: usize = 99;
pub const DEFAULT_ALPHA: f64 = 0.05;

pub fn resolve_search(flags: &SearchFlags, file: &FileConfig) -> Result<SearchOptions> {
    let defaults = SearchOptions::default();
    let fit_defaults = FitOptions::default();
    let f = &file.fit;
    let opts = SearchOptions {
        rho_grid: flags
            .rho_grid
            .clone()
            .or_else(|| file.search.rho_grid.clone())
            .unwrap_or(defaults.rho_grid),
        n_gamma: flags.n_gamma.or(file.search.n_gamma).unwrap_or(defaults.n_gamma),
        gamma_min_ratio: flags
            .gamma_min_ratio
            .or(file.search.gamma_min_ratio)
            .unwrap_or(defaults.gamma_min_ratio),
        min_width: flags.min_width.or(file.search.min_width).unwrap_or(defaults.min_width),
        fit: FitOptions {
            outer_tol: f.outer_tol.unwrap_or(fit_defaults.outer_tol),
            kkt_tol: f.kkt_tol.unwrap_or(fit_defaults.kkt_tol),
            max_outer: f.max_outer.unwrap_or(fit_defaults.max_outer),
            max_sweeps: f.max_sweeps.unwrap_or(fit_defaults.max_sweeps),
            weight_floor: f.weight_floor.unwrap_or(fit_defaults.weight_floor),
            nonneg_eta: f.nonneg_eta.unwrap_or(fit_defaults.nonneg_eta),
        },
    };
    opts.validate()?;
    Ok(opts)
}

pub fn resolve_basis(flags: &BasisFlags, file: &FileConfig) -> (usize, f64) {
    (
        flags.n_knots.or(file.basis.n_knots).unwrap_or(DEFAULT_N_KNOTS),
        flags
            .knot_margin
            .or(file.basis.knot_margin)
            .unwrap_or(DEFAULT_KNOT_MARGIN),
    )
}

pub fn resolve_grid(flags: &GridFlags, file: &FileConfig) -> Result<specseg::BinGrid> {
    let g = &file.grid;
    let t_lo = flags.t_lo.or(g.t_lo).unwrap_or(0.0);
    let Some(t_hi) = flags.t_hi.or(g.t_hi) else {
        bail!("the time window has no default; give --t-hi or set grid.t_hi in the config");
    };
    Ok(specseg::BinGrid::new(
        flags.w_lo.or(g.w_lo).unwrap_or(DEFAULT_W_LO),
        flags.w_hi.or(g.w_hi).unwrap_or(DEFAULT_W_HI),
        flags.delta_w.or(g.delta_w).unwrap_or(DEFAULT_DELTA_W),
        t_lo,
        t_hi,
        flags.delta_t.or(g.delta_t).unwrap_or(DEFAULT_DELTA_T),
    )?)
}

pub fn require_seed(flag: Option<u64>, file: &FileConfig) -> Result<u64> {
    flag.or(file.seed).context(
        "this command draws random numbers and needs an explicit seed; \
         give --seed or set `seed` in the config",
    )
}
