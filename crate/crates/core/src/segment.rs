//! Tuned spectrum fit for one time segment.
//!
//! Every candidate `(gamma, rho)` on a grid is fit by the penalized solver,
//! warm started down each gamma path, and scored by the single-segment
//! description length; the minimizer wins. Ties prefer the stronger
//! penalty (larger gamma, then larger rho), keeping selected models as
//! sparse as the score allows.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::basis::DesignMatrix;
use crate::data::{CountTable, ExposureCurve};
use crate::error::{Error, Result};
use crate::lasso::{Coefficients, CollapsedData, FitOptions, Fitter, PenaltyConfig};
use crate::mdl::{MdlNullScore, mdl_null_from_parts};

/// Grid and admissibility controls for segment tuning and the boundary
/// search. Grid density is a speed/quality dial; the defaults match the
/// published configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    /// Penalty mixing weights to scan, each strictly inside (0, 1).
    pub rho_grid: Vec<f64>,
    /// Number of gamma values per path.
    pub n_gamma: usize,
    /// Path floor as a fraction of the largest useful gamma.
    pub gamma_min_ratio: f64,
    /// Smallest admissible segment width, in time bins.
    pub min_width: usize,
    pub fit: FitOptions,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            rho_grid: (1..=19).map(|k| k as f64 * 0.05).collect(),
            n_gamma: 100,
            gamma_min_ratio: 1e-4,
            min_width: 5,
            fit: FitOptions::default(),
        }
    }
}

impl SearchOptions {
    /// A sparse grid for interactive or simulation-heavy use.
    pub fn coarse() -> Self {
        Self {
            rho_grid: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            n_gamma: 40,
            gamma_min_ratio: 1e-3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rho_grid.is_empty() {
            return Err(Error::InvalidConfig("rho grid is empty".into()));
        }
        for &rho in &self.rho_grid {
            if !rho.is_finite() || rho <= 0.0 || rho >= 1.0 {
                return Err(Error::InvalidConfig(format!(
                    "rho grid values must lie strictly inside (0, 1), got {rho}"
                )));
            }
        }
        if self.n_gamma == 0 {
            return Err(Error::InvalidConfig("need at least one gamma".into()));
        }
        if !(self.gamma_min_ratio > 0.0 && self.gamma_min_ratio <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "gamma floor ratio must lie in (0, 1], got {}",
                self.gamma_min_ratio
            )));
        }
        if self.min_width == 0 {
            return Err(Error::InvalidConfig("minimum segment width is 1".into()));
        }
        self.fit.validate()
    }
}

/// A tuned fit of time columns `[start, end)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentFit {
    pub start: usize,
    pub end: usize,
    /// Time bins in the segment (`end - start`).
    pub c: usize,
    /// Selected penalty point.
    pub penalty: PenaltyConfig,
    pub coef: Coefficients,
    pub score: MdlNullScore,
    /// Grid fits that hit an iteration cap before converging.
    pub n_unconverged: usize,
}

/// Expected spectrum `lambda(w_i)` for every wavelength bin of the grid
/// (line coefficients are zero at excluded bins, so those bins carry the
/// smooth part only). Strictly positive.
pub fn predict_spectrum(coef: &Coefficients, design: &DesignMatrix) -> Vec<f64> {
    let n = design.n_bins();
    (0..n)
        .map(|i| {
            let mut u = coef.eta[i];
            for k in 0..design.p() {
                u += design.basis[[i, k]] * coef.beta[k];
            }
            u.exp()
        })
        .collect()
}

struct BranchBest {
    value: f64,
    gamma: f64,
    rho: f64,
    theta: Vec<f64>,
    objective: f64,
    loglik: f64,
    converged: bool,
    n_outer: usize,
    n_sweeps: usize,
    score: MdlNullScore,
    n_unconverged: usize,
}

/// Per-segment constants converting the solver's collapsed log-likelihood
/// into the full per-cell form: `full = collapsed + shift`.
fn collapsed_to_full_shift(
    data: &CollapsedData,
    table: &CountTable,
    cols: std::ops::Range<usize>,
) -> f64 {
    let c = data.c as f64;
    let mut shift = 0.0;
    for i in 0..data.z.len() {
        if !data.included[i] {
            continue;
        }
        let zi = data.z[i] as f64;
        shift += ln_gamma(zi + 1.0) - zi * c.ln();
        for j in cols.clone() {
            shift -= ln_gamma(table.counts[[i, j]] as f64 + 1.0);
        }
    }
    shift
}

/// L0 counts on the original coefficient scale, straight from the
/// standardized coordinates (scaling preserves exact zeros; only the
/// intercept needs the back-transform).
fn l0_counts(std: &crate::basis::StandardizedDesign, theta: &[f64]) -> (usize, usize) {
    let p = std.p;
    let mut intercept = theta[0];
    let mut l0_beta = 0usize;
    for k in 1..p {
        if theta[k] != 0.0 {
            l0_beta += 1;
        }
        intercept -= theta[k] * std.col_mean[k] / std.col_scale[k];
    }
    if intercept != 0.0 {
        l0_beta += 1;
    }
    let l0_eta = theta[p..].iter().filter(|&&t| t != 0.0).count();
    (l0_beta + l0_eta, l0_eta)
}

/// Fits and tunes one segment: every `(gamma, rho)` grid point is fit with
/// warm starts along the gamma path and the description-length minimizer is
/// returned. A segment whose included bins are all zero falls back to the
/// intercept-only fit.
pub fn fit_segment(
    table: &CountTable,
    exposure: &ExposureCurve,
    design: &DesignMatrix,
    cols: std::ops::Range<usize>,
    opts: &SearchOptions,
) -> Result<SegmentFit> {
    opts.validate()?;
    if design.n_bins() != table.grid.n_wavelength {
        return Err(Error::Mismatch(
            "design and table disagree on wavelength bins".into(),
        ));
    }
    let data = CollapsedData::from_table(table, exposure, cols.clone())?;
    let std = design.standardize(&data.included)?;
    let shift = collapsed_to_full_shift(&data, table, cols.clone());
    let n_model = std.n;
    let c = data.c;

    if data.total() == 0 {
        let mut fitter = Fitter::new(&data, &std)?;
        let penalty = PenaltyConfig { gamma: 0.0, rho: 0.5 };
        let out = fitter.fit_degenerate(&penalty);
        let (l0_theta, l0_eta) = l0_counts(&std, &out.theta);
        let score = mdl_null_from_parts(-(out.loglik + shift), l0_theta, l0_eta, n_model, c);
        let coef = fitter.finish(out);
        return Ok(SegmentFit {
            start: cols.start,
            end: cols.end,
            c,
            penalty,
            coef,
            score,
            n_unconverged: 0,
        });
    }

    let branches: Vec<BranchBest> = opts
        .rho_grid
        .par_iter()
        .map(|&rho| -> Result<BranchBest> {
            let mut fitter = Fitter::new(&data, &std)?;
            let (gammas, null_theta) =
                fitter.path_gammas(rho, opts.n_gamma, opts.gamma_min_ratio, &opts.fit)?;
            let mut warm = null_theta;
            let mut best: Option<BranchBest> = None;
            let mut n_unconverged = 0usize;
            for &gamma in &gammas {
                let penalty = PenaltyConfig { gamma, rho };
                let out = fitter.fit_theta(&penalty, &opts.fit, Some(&warm));
                if !out.converged {
                    n_unconverged += 1;
                }
                let (l0_theta, l0_eta) = l0_counts(&std, &out.theta);
                let score =
                    mdl_null_from_parts(-(out.loglik + shift), l0_theta, l0_eta, n_model, c);
                // Equal scores keep the earlier (larger) gamma.
                if best.as_ref().is_none_or(|b| score.value < b.value) {
                    best = Some(BranchBest {
                        value: score.value,
                        gamma,
                        rho,
                        theta: out.theta.clone(),
                        objective: out.objective,
                        loglik: out.loglik,
                        converged: out.converged,
                        n_outer: out.n_outer,
                        n_sweeps: out.n_sweeps,
                        score,
                        n_unconverged: 0,
                    });
                }
                warm = out.theta;
            }
            let mut b = best.expect("gamma path is never empty");
            b.n_unconverged = n_unconverged;
            Ok(b)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut n_unconverged = 0usize;
    let mut best: Option<&BranchBest> = None;
    for b in &branches {
        n_unconverged += b.n_unconverged;
        let better = match best {
            None => true,
            Some(cur) => {
                b.value < cur.value
                    || (b.value == cur.value
                        && (b.gamma > cur.gamma || (b.gamma == cur.gamma && b.rho > cur.rho)))
            }
        };
        if better {
            best = Some(b);
        }
    }
    let best = best.expect("rho grid is never empty");
    let fitter = Fitter::new(&data, &std)?;
    let coef = fitter.finish(crate::lasso::FitOut {
        theta: best.theta.clone(),
        objective: best.objective,
        loglik: best.loglik,
        converged: best.converged,
        n_outer: best.n_outer,
        n_sweeps: best.n_sweeps,
    });
    Ok(SegmentFit {
        start: cols.start,
        end: cols.end,
        c,
        penalty: PenaltyConfig {
            gamma: best.gamma,
            rho: best.rho,
        },
        coef,
        score: best.score,
        n_unconverged,
    })
}
