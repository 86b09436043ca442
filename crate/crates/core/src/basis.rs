//! Cubic radial basis for log-spectra and the per-fit design matrix.
//!
//! The smooth part of a log-spectrum is spanned by `1, w, w^2, w^3` plus
//! `|w - knot_p|^3` terms at equally spaced knots. The full design for a fit
//! appends an implicit identity block, one indicator column per wavelength
//! bin, whose coefficients capture single-bin emission lines.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::BinGrid;
use crate::error::{Error, Result};

/// Knots are placed `margin_factor * gap` inside each end of the range, so
/// the defaults solve `2 * 1.25 * gap + (p - 5) * gap = w_hi - w_lo`.
pub const DEFAULT_END_MARGIN_FACTOR: f64 = 1.25;

/// Cubic radial basis on a wavelength range: `p` functions total, the first
/// four polynomial and the remaining `p - 4` radial about `knots`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisConfig {
    pub p: usize,
    pub w_lo: f64,
    pub w_hi: f64,
    pub knots: Vec<f64>,
}

/// Equally spaced knots with the default end margin.
pub fn make_basis(w_lo: f64, w_hi: f64, p: usize) -> Result<BasisConfig> {
    make_basis_with_margin(w_lo, w_hi, p, DEFAULT_END_MARGIN_FACTOR)
}

/// Equally spaced knots with end margins of `margin_factor` gaps.
pub fn make_basis_with_margin(
    w_lo: f64,
    w_hi: f64,
    p: usize,
    margin_factor: f64,
) -> Result<BasisConfig> {
    if p < 5 {
        return Err(Error::InvalidBasis(format!(
            "need at least 5 basis functions, got {p}"
        )));
    }
    if !(w_lo.is_finite() && w_hi.is_finite() && w_lo < w_hi) {
        return Err(Error::InvalidBasis(format!(
            "degenerate wavelength range [{w_lo}, {w_hi}]"
        )));
    }
    if !margin_factor.is_finite() || margin_factor <= 0.0 {
        return Err(Error::InvalidBasis(format!(
            "end margin factor must be positive, got {margin_factor}"
        )));
    }
    let n_knots = p - 4;
    let gap = (w_hi - w_lo) / (n_knots as f64 - 1.0 + 2.0 * margin_factor);
    let margin = margin_factor * gap;
    let knots = (0..n_knots)
        .map(|k| w_lo + margin + k as f64 * gap)
        .collect();
    Ok(BasisConfig { p, w_lo, w_hi, knots })
}

/// Evaluates all `p` basis functions at one wavelength.
pub fn evaluate_basis(config: &BasisConfig, w: f64) -> Vec<f64> {
    let mut row = Vec::with_capacity(config.p);
    row.push(1.0);
    row.push(w);
    row.push(w * w);
    row.push(w * w * w);
    for &knot in &config.knots {
        let d = (w - knot).abs();
        row.push(d * d * d);
    }
    row
}

/// Basis block evaluated at the grid's wavelength centers. The indicator
/// block (one column per bin) is implicit: column `p + i` is the `i`-th
/// standard basis vector.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub config: BasisConfig,
    /// Shape `(n_wavelength, p)`.
    pub basis: Array2<f64>,
    /// One entry per column of the full design (`p + n_wavelength`);
    /// `false` exempts the column from the L1 penalty.
    pub penalty_mask: Vec<bool>,
}

/// Evaluates the basis at the grid centers. Requires at least as many
/// wavelength bins as knots.
pub fn build_design(config: &BasisConfig, grid: &BinGrid) -> Result<DesignMatrix> {
    let n = grid.n_wavelength;
    if config.p - 4 > n {
        return Err(Error::InvalidBasis(format!(
            "{} knots exceed {n} wavelength bins",
            config.p - 4
        )));
    }
    let centers = grid.wavelength_centers();
    let mut basis = Array2::zeros((n, config.p));
    for (i, &w) in centers.iter().enumerate() {
        for (k, v) in evaluate_basis(config, w).into_iter().enumerate() {
            basis[[i, k]] = v;
        }
    }
    let mut penalty_mask = vec![true; config.p + n];
    for m in penalty_mask.iter_mut().take(4) {
        *m = false;
    }
    Ok(DesignMatrix {
        config: config.clone(),
        basis,
        penalty_mask,
    })
}

impl DesignMatrix {
    pub fn n_bins(&self) -> usize {
        self.basis.nrows()
    }

    pub fn p(&self) -> usize {
        self.config.p
    }

    /// Restricts to the included bins and standardizes basis columns 2..p
    /// to zero mean and unit sample standard deviation over those bins.
    /// Column 1 (the intercept) and the indicator block are left alone.
    pub fn standardize(&self, included: &[bool]) -> Result<StandardizedDesign> {
        let n_total = self.n_bins();
        if included.len() != n_total {
            return Err(Error::Mismatch(format!(
                "inclusion mask length {} does not match {n_total} bins",
                included.len()
            )));
        }
        let rows: Vec<usize> = (0..n_total).filter(|&i| included[i]).collect();
        let n = rows.len();
        if n == 0 {
            return Err(Error::DegenerateData(
                "no wavelength bins with positive exposure".into(),
            ));
        }
        let p = self.p();
        let mut cols = Vec::with_capacity(p);
        let mut col_mean = vec![0.0; p];
        let mut col_scale = vec![1.0; p];
        cols.push(vec![1.0; n]);
        for k in 1..p {
            let raw: Vec<f64> = rows.iter().map(|&i| self.basis[[i, k]]).collect();
            let mean = raw.iter().sum::<f64>() / n as f64;
            let scale = if n > 1 {
                let ss: f64 = raw.iter().map(|&x| (x - mean) * (x - mean)).sum();
                let sd = (ss / (n as f64 - 1.0)).sqrt();
                if sd > 1e-12 { sd } else { 1.0 }
            } else {
                1.0
            };
            col_mean[k] = mean;
            col_scale[k] = scale;
            cols.push(raw.iter().map(|&x| (x - mean) / scale).collect());
        }
        Ok(StandardizedDesign {
            n,
            p,
            rows,
            cols,
            col_mean,
            col_scale,
        })
    }
}

/// Design restricted to included bins, with standardized basis columns.
/// The solver optimizes coefficients on this scale; `destandardize` maps
/// them back to the raw basis.
#[derive(Debug, Clone)]
pub struct StandardizedDesign {
    pub n: usize,
    pub p: usize,
    /// Included bin indices, in increasing order.
    pub rows: Vec<usize>,
    /// `p` standardized basis columns, each of length `n`.
    pub cols: Vec<Vec<f64>>,
    pub col_mean: Vec<f64>,
    pub col_scale: Vec<f64>,
}

impl StandardizedDesign {
    /// Total coordinate count: `p` basis plus one indicator per included bin.
    pub fn n_coords(&self) -> usize {
        self.p + self.n
    }

    /// Linear predictor contribution of the basis block (excluding offsets
    /// and indicator coefficients) for each included row.
    pub fn basis_predictor(&self, theta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (k, col) in self.cols.iter().enumerate() {
            let t = theta[k];
            if t != 0.0 {
                for (o, &x) in out.iter_mut().zip(col) {
                    *o += t * x;
                }
            }
        }
        out
    }

    /// Maps basis coefficients from the standardized scale back to the raw
    /// basis: slopes divide by their column scale and the intercept absorbs
    /// the centering shifts.
    pub fn destandardize(&self, theta_basis: &[f64]) -> Vec<f64> {
        assert_eq!(theta_basis.len(), self.p);
        let mut beta = vec![0.0; self.p];
        let mut intercept = theta_basis[0];
        for k in 1..self.p {
            beta[k] = theta_basis[k] / self.col_scale[k];
            intercept -= theta_basis[k] * self.col_mean[k] / self.col_scale[k];
        }
        beta[0] = intercept;
        beta
    }
}
