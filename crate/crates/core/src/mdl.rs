//! Description-length scores for tuned segment fits and segmentations.
//!
//! A fitted segment is charged its negative log-likelihood (always in the
//! full per-`(i, j)` form, never the collapsed one), half a `log(N c)` per
//! nonzero coefficient, and the log count of ways to place its nonzero
//! lines. A segmentation additionally pays `log B` for its segment count
//! and `log c_b` per segment for the boundary positions. All logs natural.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::basis::DesignMatrix;
use crate::data::{CountTable, ExposureCurve};
use crate::error::{Error, Result};
use crate::lasso::{Coefficients, pois_logpmf};

/// `log C(n, k)`, natural log.
pub fn log_binomial(n: u64, k: u64) -> f64 {
    assert!(k <= n, "log_binomial needs k <= n, got n={n}, k={k}");
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Tuning score of a single segment fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MdlNullScore {
    pub value: f64,
    pub neg_loglik: f64,
    pub param_cost: f64,
    pub combinatorial: f64,
    pub l0_theta: usize,
    pub l0_eta: usize,
}

/// Segmentation score with its decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MdlFullScore {
    pub value: f64,
    pub neg_loglik: f64,
    pub segment_cost: f64,
    pub boundary_cost: f64,
    pub param_cost: f64,
    pub combinatorial: f64,
}

/// Assembles a segment score from precomputed pieces: `n_model` modeled
/// wavelength bins, `c` time bins, and the fit's exact nonzero counts.
pub fn mdl_null_from_parts(
    neg_loglik: f64,
    l0_theta: usize,
    l0_eta: usize,
    n_model: usize,
    c: usize,
) -> MdlNullScore {
    let param_cost = 0.5 * l0_theta as f64 * ((n_model * c) as f64).ln();
    let combinatorial = log_binomial(n_model as u64, l0_eta as u64);
    MdlNullScore {
        value: neg_loglik + param_cost + combinatorial,
        neg_loglik,
        param_cost,
        combinatorial,
        l0_theta,
        l0_eta,
    }
}

/// Scores a fitted segment spectrum against the segment's counts, columns
/// `cols` of `table`. The likelihood is evaluated per `(i, j)` cell.
pub fn mdl_null(
    coef: &Coefficients,
    design: &DesignMatrix,
    table: &CountTable,
    cols: std::ops::Range<usize>,
    exposure: &ExposureCurve,
) -> Result<MdlNullScore> {
    exposure.validate_against(&table.grid)?;
    let n = design.n_bins();
    if n != table.grid.n_wavelength || coef.beta.len() != design.p() || coef.eta.len() != n {
        return Err(Error::Mismatch(
            "coefficients, design, and table disagree on dimensions".into(),
        ));
    }
    if cols.is_empty() || cols.end > table.grid.n_time {
        return Err(Error::InvalidSegment(format!(
            "time-bin range {cols:?} is empty or exceeds {} columns",
            table.grid.n_time
        )));
    }
    let c = cols.len();
    let mut neg_loglik = 0.0;
    let mut n_model = 0usize;
    for i in 0..n {
        if !exposure.included[i] {
            continue;
        }
        n_model += 1;
        let mut log_lambda = coef.eta[i];
        for k in 0..design.p() {
            log_lambda += design.basis[[i, k]] * coef.beta[k];
        }
        let mean = exposure.s[i] * log_lambda.exp();
        for j in cols.clone() {
            neg_loglik -= pois_logpmf(table.counts[[i, j]], mean);
        }
    }
    Ok(mdl_null_from_parts(
        neg_loglik,
        coef.l0_theta(),
        coef.l0_eta(),
        n_model,
        c,
    ))
}

/// Scores a segmentation from its per-segment scores and segment lengths
/// (time bins per segment, in order).
pub fn mdl_full(per_segment: &[MdlNullScore], seg_lengths: &[usize]) -> MdlFullScore {
    assert!(
        !per_segment.is_empty() && per_segment.len() == seg_lengths.len(),
        "need one score per segment"
    );
    let b = per_segment.len() as f64;
    let neg_loglik: f64 = per_segment.iter().map(|s| s.neg_loglik).sum();
    let param_cost: f64 = per_segment.iter().map(|s| s.param_cost).sum();
    let combinatorial: f64 = per_segment.iter().map(|s| s.combinatorial).sum();
    let segment_cost = b.ln();
    let boundary_cost: f64 = seg_lengths.iter().map(|&c| (c as f64).ln()).sum();
    MdlFullScore {
        value: neg_loglik + param_cost + combinatorial + segment_cost + boundary_cost,
        neg_loglik,
        segment_cost,
        boundary_cost,
        param_cost,
        combinatorial,
    }
}
