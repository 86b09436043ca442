//! L1-penalized Poisson regression for the spectrum of one time segment.
//!
//! Counts collapse over a segment's time bins to sufficient statistics
//! `z_i = sum_j Y_ij` with offsets `log(c * s_i)`, where `c` is the number
//! of collapsed columns. The penalized log-likelihood
//!
//! ```text
//!   sum_i q(z_i; c s_i lambda_i) - gamma * (rho |beta_5..P|_1 + (1 - rho) |eta|_1)
//! ```
//!
//! is maximized by iteratively reweighted least squares with a cyclic
//! coordinate-descent inner loop and soft thresholding, which yields exact
//! zeros. The four polynomial coefficients are never penalized. Basis
//! columns are standardized inside the solver (see
//! [`DesignMatrix::standardize`]); the penalty applies on that scale and
//! reported coefficients are transformed back.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::basis::{DesignMatrix, StandardizedDesign};
use crate::data::{CountTable, ExposureCurve};
use crate::error::{Error, Result};

/// Poisson log-probability mass `q(x; a) = -a + x log a - log x!`, with
/// `q(0; 0) = 0` and `q(x > 0; 0) = -inf`.
pub fn pois_logpmf(x: u64, a: f64) -> f64 {
    if a.is_nan() || a < 0.0 {
        return f64::NAN;
    }
    if a == 0.0 {
        return if x == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if a.is_infinite() {
        return f64::NEG_INFINITY;
    }
    -a + x as f64 * a.ln() - ln_gamma(x as f64 + 1.0)
}

/// Counts of one time segment collapsed over its columns.
///
/// `z[i]` sums the segment's counts in wavelength bin `i`, `c` is the
/// number of time bins collapsed, and `offset[i] = log(c * s_i)` for bins
/// with positive exposure (`NaN` at excluded bins, which never enter the
/// likelihood).
#[derive(Debug, Clone)]
pub struct CollapsedData {
    pub z: Vec<u64>,
    pub c: usize,
    pub offset: Vec<f64>,
    pub included: Vec<bool>,
}

impl CollapsedData {
    pub fn from_table(
        table: &CountTable,
        exposure: &ExposureCurve,
        cols: std::ops::Range<usize>,
    ) -> Result<Self> {
        exposure.validate_against(&table.grid)?;
        if cols.is_empty() || cols.end > table.grid.n_time {
            return Err(Error::InvalidSegment(format!(
                "time-bin range {cols:?} is empty or exceeds {} columns",
                table.grid.n_time
            )));
        }
        let c = cols.len();
        let z = table.collapse_columns(cols);
        let offset = exposure
            .s
            .iter()
            .zip(&exposure.included)
            .map(|(&s, &inc)| if inc { (c as f64 * s).ln() } else { f64::NAN })
            .collect();
        Ok(Self {
            z,
            c,
            offset,
            included: exposure.included.clone(),
        })
    }

    /// Total counts over included bins.
    pub fn total(&self) -> u64 {
        self.z
            .iter()
            .zip(&self.included)
            .filter(|&(_, &inc)| inc)
            .map(|(&z, _)| z)
            .sum()
    }
}

/// One point of the penalty plane: overall strength `gamma` and mixing
/// weight `rho` (smooth-basis share versus line share).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub gamma: f64,
    pub rho: f64,
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(Error::InvalidPenalty(format!(
                "gamma must be finite and >= 0, got {}",
                self.gamma
            )));
        }
        if !self.rho.is_finite() || !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::InvalidPenalty(format!(
                "rho must lie in [0, 1], got {}",
                self.rho
            )));
        }
        Ok(())
    }
}

/// Solver controls. The defaults are conservative; loosen them only for
/// exploratory runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_outer: usize,
    pub max_sweeps: usize,
    /// Relative objective-change tolerance for the outer loop.
    pub outer_tol: f64,
    /// Stationarity tolerance on the penalized score residual.
    pub kkt_tol: f64,
    /// Lower bound on the IRLS working weights.
    pub weight_floor: f64,
    /// Clamp line coefficients at zero from below (emission-only lines).
    pub nonneg_eta: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_outer: 100,
            max_sweeps: 10_000,
            outer_tol: 1e-8,
            kkt_tol: 1e-5,
            weight_floor: 1e-10,
            nonneg_eta: false,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_outer == 0 || self.max_sweeps == 0 {
            return Err(Error::InvalidConfig(
                "solver iteration caps must be >= 1".into(),
            ));
        }
        if !(self.outer_tol > 0.0) || !(self.kkt_tol > 0.0) || !(self.weight_floor > 0.0) {
            return Err(Error::InvalidConfig(
                "solver tolerances must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A fitted segment spectrum on the original coefficient scale.
///
/// `beta` multiplies the raw basis functions; `eta` has one entry per
/// wavelength bin of the full grid (zero at excluded bins). Exact zeros are
/// preserved, so the L0 counts below are literal nonzero counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub beta: Vec<f64>,
    pub eta: Vec<f64>,
    /// Penalized objective at the solution (penalty taken on the
    /// standardized scale).
    pub objective: f64,
    /// Unpenalized collapsed log-likelihood `sum_i q(z_i; c s_i lambda_i)`.
    pub loglik: f64,
    pub converged: bool,
    pub n_outer: usize,
    pub n_sweeps: usize,
}

impl Coefficients {
    pub fn theta(&self) -> Vec<f64> {
        let mut t = self.beta.clone();
        t.extend_from_slice(&self.eta);
        t
    }

    pub fn l0_beta(&self) -> usize {
        self.beta.iter().filter(|&&b| b != 0.0).count()
    }

    pub fn l0_eta(&self) -> usize {
        self.eta.iter().filter(|&&e| e != 0.0).count()
    }

    pub fn l0_theta(&self) -> usize {
        self.l0_beta() + self.l0_eta()
    }
}

/// Maximizes the penalized likelihood for one `(gamma, rho)` point, cold
/// started. All-zero segments short-circuit to an intercept-only fit with a
/// half-count pseudo total, keeping downstream scores finite.
pub fn fit_penalized(
    data: &CollapsedData,
    design: &DesignMatrix,
    penalty: &PenaltyConfig,
    opts: &FitOptions,
) -> Result<Coefficients> {
    penalty.validate()?;
    opts.validate()?;
    let std = design.standardize(&data.included)?;
    let mut fitter = Fitter::new(data, &std)?;
    Ok(fitter.fit(penalty, opts, None))
}

/// Evaluates the collapsed log-likelihood and its score (gradient) at given
/// coefficients on the original scale. The score is ordered as the `p`
/// basis coordinates followed by one line coordinate per wavelength bin;
/// entries for excluded bins are zero.
pub fn loglik_and_score(
    data: &CollapsedData,
    design: &DesignMatrix,
    beta: &[f64],
    eta: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let n = design.n_bins();
    let p = design.p();
    if beta.len() != p || eta.len() != n || data.z.len() != n {
        return Err(Error::Mismatch(format!(
            "coefficient lengths ({}, {}) do not match design ({p}, {n})",
            beta.len(),
            eta.len()
        )));
    }
    let mut loglik = 0.0;
    let mut score = vec![0.0; p + n];
    for i in 0..n {
        if !data.included[i] {
            continue;
        }
        let mut u = data.offset[i] + eta[i];
        for k in 0..p {
            u += design.basis[[i, k]] * beta[k];
        }
        let m = u.exp();
        let zi = data.z[i] as f64;
        loglik += zi * u - m - ln_gamma(zi + 1.0);
        let d = zi - m;
        for k in 0..p {
            score[k] += d * design.basis[[i, k]];
        }
        score[p + i] = d;
    }
    Ok((loglik, score))
}

/// Log-spaced penalty strengths for one `rho`, from the smallest `gamma`
/// that zeroes every penalized coordinate down to `gamma_max * min_ratio`.
///
/// The anchor comes from the score vector at the null fit (polynomial block
/// only, everything penalized pinned at zero). Data whose included bins are
/// all zero-count have no usable path and are rejected.
pub fn penalty_path(
    data: &CollapsedData,
    design: &DesignMatrix,
    rho: f64,
    n_gamma: usize,
    min_ratio: f64,
    opts: &FitOptions,
) -> Result<Vec<f64>> {
    let std = design.standardize(&data.included)?;
    let mut fitter = Fitter::new(data, &std)?;
    let (gammas, _) = fitter.path_gammas(rho, n_gamma, min_ratio, opts)?;
    Ok(gammas)
}

fn soft_threshold(x: f64, v: f64) -> f64 {
    if x > v {
        x - v
    } else if x < -v {
        x + v
    } else {
        0.0
    }
}

/// Hard step-halving limit; 2^-60 of the proposed step is a no-op in f64.
const MAX_HALVINGS: usize = 60;
/// Slack allowed before a step counts as an ascent violation.
const ASCENT_SLACK: f64 = 1e-10;
/// The inner loop stops once no coordinate moves its working score by more
/// than this fraction of the stationarity tolerance.
const INNER_TOL_FACTOR: f64 = 0.05;
/// Relative enlargement of the path anchor. At the exact anchor the largest
/// penalized score sits on the soft-threshold boundary and rounding decides
/// whether it activates; the slack pushes the endpoint strictly inside the
/// all-zero region so the first path fit is the null model for warm and
/// cold starts alike.
const GAMMA_MAX_SLACK: f64 = 1e-3;

pub(crate) struct FitOut {
    pub theta: Vec<f64>,
    pub objective: f64,
    pub loglik: f64,
    pub converged: bool,
    pub n_outer: usize,
    pub n_sweeps: usize,
}

/// Reusable solver state for one segment (one `CollapsedData` against one
/// standardized design). Coordinates are ordered basis-first, then one line
/// coordinate per included row.
pub(crate) struct Fitter<'a> {
    std: &'a StandardizedDesign,
    /// Wavelength-bin count of the full grid (including excluded bins).
    full_len: usize,
    z: Vec<f64>,
    offset: Vec<f64>,
    /// `sum_i ln Gamma(z_i + 1)` over included rows.
    lgz: f64,
    z_total: f64,
    u: Vec<f64>,
    m: Vec<f64>,
    w: Vec<f64>,
    r: Vec<f64>,
    curv: Vec<f64>,
    v: Vec<f64>,
    theta: Vec<f64>,
}

impl<'a> Fitter<'a> {
    pub fn new(data: &CollapsedData, std: &'a StandardizedDesign) -> Result<Self> {
        if data.z.len() != data.included.len() || data.offset.len() != data.z.len() {
            return Err(Error::Mismatch(
                "collapsed data arrays have unequal lengths".into(),
            ));
        }
        let included_count = data.included.iter().filter(|&&b| b).count();
        if std.rows.len() != included_count
            || !std.rows.iter().all(|&i| i < data.z.len() && data.included[i])
        {
            return Err(Error::Mismatch(
                "standardized design was built for a different inclusion mask".into(),
            ));
        }
        if data.c == 0 {
            return Err(Error::InvalidSegment("segment has no time bins".into()));
        }
        let n = std.n;
        let z: Vec<f64> = std.rows.iter().map(|&i| data.z[i] as f64).collect();
        let offset: Vec<f64> = std.rows.iter().map(|&i| data.offset[i]).collect();
        if offset.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidExposure(
                "included bins must have finite offsets".into(),
            ));
        }
        let lgz = z.iter().map(|&zi| ln_gamma(zi + 1.0)).sum();
        let z_total = z.iter().sum();
        let n_coords = std.n_coords();
        Ok(Self {
            std,
            full_len: data.z.len(),
            z,
            offset,
            lgz,
            z_total,
            u: vec![0.0; n],
            m: vec![0.0; n],
            w: vec![0.0; n],
            r: vec![0.0; n],
            curv: vec![0.0; n_coords],
            v: vec![0.0; n_coords],
            theta: vec![0.0; n_coords],
        })
    }

    pub fn n_coords(&self) -> usize {
        self.std.n_coords()
    }

    fn set_penalty(&mut self, gamma: f64, rho: f64) {
        let p = self.std.p;
        for k in 0..self.n_coords() {
            self.v[k] = if k < 4 {
                0.0
            } else if k < p {
                gamma * rho
            } else {
                gamma * (1.0 - rho)
            };
        }
    }

    /// Intercept-only start: matches total counts to total exposure, with a
    /// half count standing in when the segment is empty.
    fn cold_start(&self) -> Vec<f64> {
        let mut theta = vec![0.0; self.n_coords()];
        let e_total: f64 = self.offset.iter().map(|&o| o.exp()).sum();
        let target = if self.z_total > 0.0 { self.z_total } else { 0.5 };
        theta[0] = (target / e_total).ln();
        theta
    }

    fn predict(&mut self) {
        let p = self.std.p;
        self.u.copy_from_slice(&self.offset);
        for k in 0..p {
            let t = self.theta[k];
            if t != 0.0 {
                for (ui, &x) in self.u.iter_mut().zip(&self.std.cols[k]) {
                    *ui += t * x;
                }
            }
        }
        for i in 0..self.std.n {
            self.u[i] += self.theta[p + i];
            self.m[i] = self.u[i].exp();
        }
    }

    /// Penalized objective at the current predictor state. Zero
    /// coordinates contribute nothing even under an infinite penalty
    /// (the null fit pins them that way).
    fn objective(&self) -> f64 {
        let mut ll = 0.0;
        for i in 0..self.std.n {
            ll += self.z[i] * self.u[i] - self.m[i];
        }
        ll -= self.lgz;
        let pen: f64 = self
            .theta
            .iter()
            .zip(&self.v)
            .map(|(&t, &v)| if t == 0.0 { 0.0 } else { v * t.abs() })
            .sum();
        ll - pen
    }

    fn loglik(&self) -> f64 {
        let mut ll = 0.0;
        for i in 0..self.std.n {
            ll += self.z[i] * self.u[i] - self.m[i];
        }
        ll - self.lgz
    }

    /// Maximal violation of the stationarity conditions at the current
    /// predictor state, using exact (not working-model) scores.
    fn kkt_residual(&self, nonneg_eta: bool) -> f64 {
        let p = self.std.p;
        let mut worst = 0.0f64;
        for k in 0..p {
            let mut score = 0.0;
            let col = &self.std.cols[k];
            for i in 0..self.std.n {
                score += (self.z[i] - self.m[i]) * col[i];
            }
            worst = worst.max(coord_violation(score, self.theta[k], self.v[k], false));
        }
        for i in 0..self.std.n {
            let score = self.z[i] - self.m[i];
            worst = worst.max(coord_violation(
                score,
                self.theta[p + i],
                self.v[p + i],
                nonneg_eta,
            ));
        }
        worst
    }

    /// One coordinate update of a basis coefficient on the current
    /// quadratic model. Returns the working-score move `|curvature * delta|`.
    fn basis_coord_step(&mut self, k: usize) -> f64 {
        let ak = self.curv[k];
        if ak <= 0.0 {
            return 0.0;
        }
        let n = self.std.n;
        let col = &self.std.cols[k];
        let mut g = 0.0;
        for i in 0..n {
            g += self.w[i] * col[i] * self.r[i];
        }
        let num = g + ak * self.theta[k];
        let t_new = soft_threshold(num, self.v[k]) / ak;
        let d = t_new - self.theta[k];
        if d == 0.0 {
            return 0.0;
        }
        for i in 0..n {
            self.r[i] -= d * col[i];
        }
        self.theta[k] = t_new;
        (ak * d).abs()
    }

    /// Exact weighted least-squares update of the four unpenalized
    /// polynomial coordinates. Cyclic descent crawls on this block (the
    /// standardized monomials stay strongly collinear), so it is solved as
    /// one 4x4 system instead; `None` signals a Gram matrix too degenerate
    /// to factor, and the caller falls back to coordinate steps.
    fn solve_free_block(&mut self) -> Option<f64> {
        const NF: usize = 4;
        let n = self.std.n;
        let mut a = [[0.0f64; NF]; NF];
        let mut b = [0.0f64; NF];
        for k in 0..NF {
            let ck = &self.std.cols[k];
            for l in k..NF {
                let cl = &self.std.cols[l];
                let mut s = 0.0;
                for i in 0..n {
                    s += self.w[i] * ck[i] * cl[i];
                }
                a[k][l] = s;
            }
            let mut g = 0.0;
            for i in 0..n {
                g += self.w[i] * ck[i] * self.r[i];
            }
            b[k] = g;
        }
        let ridge = 1e-12 * (0..NF).map(|k| a[k][k]).fold(f64::MIN_POSITIVE, f64::max);
        let mut l = [[0.0f64; NF]; NF];
        for k in 0..NF {
            let mut d = a[k][k] + ridge;
            for q in 0..k {
                d -= l[k][q] * l[k][q];
            }
            if d <= 0.0 || !d.is_finite() {
                return None;
            }
            l[k][k] = d.sqrt();
            for row in (k + 1)..NF {
                let mut s = a[k][row];
                for q in 0..k {
                    s -= l[row][q] * l[k][q];
                }
                l[row][k] = s / l[k][k];
            }
        }
        let mut y = [0.0f64; NF];
        for k in 0..NF {
            let mut s = b[k];
            for q in 0..k {
                s -= l[k][q] * y[q];
            }
            y[k] = s / l[k][k];
        }
        let mut delta = [0.0f64; NF];
        for k in (0..NF).rev() {
            let mut s = y[k];
            for q in (k + 1)..NF {
                s -= l[q][k] * delta[q];
            }
            delta[k] = s / l[k][k];
        }
        let mut change = 0.0f64;
        for k in 0..NF {
            let d = delta[k];
            if d != 0.0 {
                let col = &self.std.cols[k];
                for i in 0..n {
                    self.r[i] -= d * col[i];
                }
                self.theta[k] += d;
                change = change.max((self.curv[k] * d).abs());
            }
        }
        Some(change)
    }

    /// Exact minimization of the working objective over the active set
    /// with penalty signs frozen. The per-bin offsets are eliminated
    /// first: at the restricted optimum an active offset's weighted
    /// residual equals its penalty gradient divided by its weight, so
    /// the normal equations for the basis block involve only rows
    /// without an active offset. The step is clamped at the first sign
    /// crossing, which zeroes the crossing coordinate and shrinks the
    /// set for the next round. Returns the largest working-score move
    /// and whether the step ran unclamped, or `None` when the reduced
    /// Gram matrix cannot be factored.
    fn solve_active_block(&mut self, nonneg_eta: bool) -> Option<(f64, bool)> {
        let p = self.std.p;
        let n = self.std.n;
        let mut cols: Vec<usize> = (0..4).collect();
        cols.extend((4..p).filter(|&k| self.theta[k] != 0.0));
        let m = cols.len();

        // Stationary weighted residual for rows with an active offset.
        let mut q = vec![0.0f64; n];
        let mut n_plain = 0usize;
        for i in 0..n {
            if self.theta[p + i] == 0.0 {
                n_plain += 1;
            } else {
                q[i] = self.v[p + i] * self.theta[p + i].signum();
            }
        }

        let mut delta = vec![0.0f64; m];
        if n_plain > 0 {
            let mut a = vec![0.0f64; m * m];
            let mut b = vec![0.0f64; m];
            for (kk, &k) in cols.iter().enumerate() {
                let ck = &self.std.cols[k];
                for (ll, &l) in cols.iter().enumerate().skip(kk) {
                    let cl = &self.std.cols[l];
                    let mut s = 0.0;
                    for i in 0..n {
                        if self.theta[p + i] == 0.0 {
                            s += self.w[i] * ck[i] * cl[i];
                        }
                    }
                    a[kk * m + ll] = s;
                }
                let mut g = if k < 4 {
                    0.0
                } else {
                    -self.v[k] * self.theta[k].signum()
                };
                for i in 0..n {
                    g += if self.theta[p + i] == 0.0 {
                        self.w[i] * ck[i] * self.r[i]
                    } else {
                        ck[i] * q[i]
                    };
                }
                b[kk] = g;
            }
            let ridge = 1e-12
                * (0..m)
                    .map(|k| a[k * m + k])
                    .fold(f64::MIN_POSITIVE, f64::max);
            let mut chol = vec![0.0f64; m * m];
            for k in 0..m {
                let mut d = a[k * m + k] + ridge;
                for t in 0..k {
                    d -= chol[k * m + t] * chol[k * m + t];
                }
                if d <= 0.0 || !d.is_finite() {
                    return None;
                }
                chol[k * m + k] = d.sqrt();
                for row in (k + 1)..m {
                    let mut s = a[k * m + row];
                    for t in 0..k {
                        s -= chol[row * m + t] * chol[k * m + t];
                    }
                    chol[row * m + k] = s / chol[k * m + k];
                }
            }
            let mut y = vec![0.0f64; m];
            for k in 0..m {
                let mut s = b[k];
                for t in 0..k {
                    s -= chol[k * m + t] * y[t];
                }
                y[k] = s / chol[k * m + k];
            }
            for k in (0..m).rev() {
                let mut s = y[k];
                for t in (k + 1)..m {
                    s -= chol[t * m + k] * delta[t];
                }
                delta[k] = s / chol[k * m + k];
            }
            if delta.iter().any(|d| !d.is_finite()) {
                return None;
            }
        }

        // Basis contribution per row, then the eliminated offset steps.
        let mut dot = vec![0.0f64; n];
        for (kk, &k) in cols.iter().enumerate() {
            let d = delta[kk];
            if d != 0.0 {
                for (di, &x) in dot.iter_mut().zip(&self.std.cols[k]) {
                    *di += d * x;
                }
            }
        }
        let mut d_eta = vec![0.0f64; n];
        for i in 0..n {
            if self.theta[p + i] != 0.0 {
                let d = self.r[i] - dot[i] - q[i] / self.w[i];
                if !d.is_finite() {
                    return None;
                }
                d_eta[i] = d;
            }
        }

        // Clamp at the first zero crossing among the penalized movers.
        let mut t_step = 1.0f64;
        for (kk, &k) in cols.iter().enumerate().skip(4) {
            let (th, d) = (self.theta[k], delta[kk]);
            if d != 0.0 && (th + d) * th.signum() < 0.0 {
                t_step = t_step.min(-th / d);
            }
        }
        for i in 0..n {
            let (th, d) = (self.theta[p + i], d_eta[i]);
            if d != 0.0 && th != 0.0 && (th + d) * th.signum() < 0.0 {
                t_step = t_step.min(-th / d);
            }
        }
        if !(t_step > 0.0) {
            return Some((0.0, true));
        }

        let mut change = 0.0f64;
        for (kk, &k) in cols.iter().enumerate() {
            let d = t_step * delta[kk];
            if d != 0.0 {
                self.theta[k] += d;
                change = change.max((self.curv[k] * d).abs());
            }
        }
        for i in 0..n {
            self.r[i] -= t_step * dot[i];
            let d = t_step * d_eta[i];
            if d != 0.0 {
                self.theta[p + i] += d;
                self.r[i] -= d;
                change = change.max((self.w[i] * d).abs());
            }
        }
        // A clamped step lands a coordinate on zero up to rounding; pin
        // it there so the frozen-sign bookkeeping stays exact.
        if t_step < 1.0 {
            for (kk, &k) in cols.iter().enumerate().skip(4) {
                let before = self.theta[k] - t_step * delta[kk];
                if delta[kk] != 0.0 && self.theta[k] * before.signum() <= 0.0 {
                    self.theta[k] = 0.0;
                }
            }
            for i in 0..n {
                if d_eta[i] != 0.0 && self.theta[p + i] != 0.0 {
                    let before = self.theta[p + i] - t_step * d_eta[i];
                    if self.theta[p + i] * before.signum() <= 0.0 {
                        self.theta[p + i] = 0.0;
                    }
                }
            }
        }
        if nonneg_eta {
            for i in 0..n {
                if self.theta[p + i] < 0.0 {
                    self.theta[p + i] = 0.0;
                }
            }
        }
        Some((change, t_step >= 1.0))
    }

    /// Runs clamped active-set solves until a full step lands or the
    /// move falls under `tol`. Each clamped round zeroes a coordinate,
    /// so the cap is a guard rather than the usual exit. Returns the
    /// number of rounds, which the caller books against the sweep
    /// budget.
    fn drain_active_block(&mut self, nonneg_eta: bool, tol: f64) -> usize {
        let mut used = 0;
        while used < 64 {
            let Some((change, full_step)) = self.solve_active_block(nonneg_eta) else {
                break;
            };
            used += 1;
            if full_step || change < tol {
                break;
            }
        }
        used
    }

    /// One pass over all coordinates on the current quadratic model: an
    /// exact solve of the polynomial block, then cyclic updates of the
    /// penalized coordinates. Returns the largest working-score move
    /// `|curvature * delta|`.
    fn sweep(&mut self, active_only: bool, nonneg_eta: bool) -> f64 {
        let p = self.std.p;
        let n = self.std.n;
        let mut change = match self.solve_free_block() {
            Some(c) => c,
            None => (0..4).map(|k| self.basis_coord_step(k)).fold(0.0, f64::max),
        };
        for k in 4..p {
            if active_only && self.theta[k] == 0.0 {
                continue;
            }
            change = change.max(self.basis_coord_step(k));
        }
        for i in 0..n {
            let k = p + i;
            if active_only && self.theta[k] == 0.0 {
                continue;
            }
            let wi = self.w[i];
            let num = wi * (self.r[i] + self.theta[k]);
            let t_new = if nonneg_eta {
                ((num - self.v[k]) / wi).max(0.0)
            } else {
                soft_threshold(num, self.v[k]) / wi
            };
            let d = t_new - self.theta[k];
            if d != 0.0 {
                self.r[i] -= d;
                self.theta[k] = t_new;
                change = change.max((wi * d).abs());
            }
        }
        change
    }

    /// Solves the working weighted least-squares problem: full sweeps
    /// pick the active set, exact block solves descend it. Coordinate
    /// passes alone crawl here because the basis columns and the
    /// per-bin offsets can trade off along near-flat valleys; the block
    /// solve cuts straight across them.
    fn inner_cd(&mut self, nonneg_eta: bool, budget: usize, tol: f64) -> usize {
        let mut sweeps = 0;
        while sweeps < budget {
            let full_change = self.sweep(false, nonneg_eta);
            sweeps += 1;
            if full_change < tol {
                break;
            }
            while sweeps < budget {
                sweeps += self.drain_active_block(nonneg_eta, tol);
                let change = self.sweep(true, nonneg_eta);
                sweeps += 1;
                if change < tol {
                    break;
                }
            }
        }
        sweeps
    }

    fn refresh_quadratic(&mut self, floor: f64) {
        let p = self.std.p;
        let n = self.std.n;
        for i in 0..n {
            self.w[i] = self.m[i].max(floor);
            self.r[i] = (self.z[i] - self.m[i]) / self.w[i];
        }
        for k in 0..p {
            let col = &self.std.cols[k];
            let mut a = 0.0;
            for i in 0..n {
                a += self.w[i] * col[i] * col[i];
            }
            self.curv[k] = a;
        }
        for i in 0..n {
            self.curv[p + i] = self.w[i];
        }
    }

    /// IRLS outer loop with step halving; ascent is monotone up to
    /// `ASCENT_SLACK`. Convergence requires both a small relative objective
    /// change and a KKT residual within `opts.kkt_tol`.
    pub fn fit_theta(&mut self, penalty: &PenaltyConfig, opts: &FitOptions, warm: Option<&[f64]>) -> FitOut {
        self.set_penalty(penalty.gamma, penalty.rho);
        self.theta = match warm {
            Some(t) => {
                assert_eq!(t.len(), self.n_coords());
                t.to_vec()
            }
            None => self.cold_start(),
        };
        self.predict();
        let mut obj = self.objective();
        if !obj.is_finite() {
            self.theta = self.cold_start();
            self.predict();
            obj = self.objective();
        }
        let inner_tol = INNER_TOL_FACTOR * opts.kkt_tol;
        let mut n_sweeps = 0;
        let mut n_outer = 0;
        let mut converged = false;
        let mut theta_old = vec![0.0; self.n_coords()];
        while n_outer < opts.max_outer {
            n_outer += 1;
            self.refresh_quadratic(opts.weight_floor);
            theta_old.copy_from_slice(&self.theta);
            let obj_old = obj;
            n_sweeps += self.inner_cd(
                opts.nonneg_eta,
                opts.max_sweeps.saturating_sub(n_sweeps),
                inner_tol,
            );
            self.predict();
            obj = self.objective();
            let mut halvings = 0;
            while !(obj >= obj_old - ASCENT_SLACK) && halvings < MAX_HALVINGS {
                for (t, &t_old) in self.theta.iter_mut().zip(&theta_old) {
                    *t = 0.5 * (*t + t_old);
                }
                self.predict();
                obj = self.objective();
                halvings += 1;
            }
            let stuck = if !(obj >= obj_old - ASCENT_SLACK) {
                self.theta.copy_from_slice(&theta_old);
                self.predict();
                obj = obj_old;
                true
            } else {
                false
            };
            let small_change = (obj - obj_old).abs() <= opts.outer_tol * (1.0 + obj_old.abs());
            if small_change || stuck {
                if self.kkt_residual(opts.nonneg_eta) <= opts.kkt_tol {
                    converged = true;
                    break;
                }
                if stuck || n_sweeps >= opts.max_sweeps {
                    break;
                }
            }
            if n_sweeps >= opts.max_sweeps {
                break;
            }
        }
        FitOut {
            theta: self.theta.clone(),
            objective: obj,
            loglik: self.loglik(),
            converged,
            n_outer,
            n_sweeps,
        }
    }

    /// Fit with every penalized coordinate pinned at zero: the polynomial
    /// null model anchoring the penalty path.
    pub fn fit_null(&mut self, opts: &FitOptions) -> FitOut {
        self.set_penalty(f64::INFINITY, 0.5);
        for k in 0..4 {
            self.v[k] = 0.0;
        }
        self.theta = self.cold_start();
        self.predict();
        let mut obj = self.objective();
        let mut n_sweeps = 0;
        let mut n_outer = 0;
        let mut converged = false;
        let mut theta_old = vec![0.0; self.n_coords()];
        while n_outer < opts.max_outer {
            n_outer += 1;
            self.refresh_quadratic(opts.weight_floor);
            theta_old.copy_from_slice(&self.theta);
            let obj_old = obj;
            // Only the four unpenalized coordinates move; infinite penalty
            // keeps the rest at zero, so active-only sweeps suffice.
            let inner_tol = INNER_TOL_FACTOR * opts.kkt_tol;
            let mut sweeps = 0;
            loop {
                let change = self.sweep(true, false);
                sweeps += 1;
                if change < inner_tol || sweeps >= 100 {
                    break;
                }
            }
            n_sweeps += sweeps;
            self.predict();
            obj = self.objective();
            let mut halvings = 0;
            while !(obj >= obj_old - ASCENT_SLACK) && halvings < MAX_HALVINGS {
                for (t, &t_old) in self.theta.iter_mut().zip(&theta_old) {
                    *t = 0.5 * (*t + t_old);
                }
                self.predict();
                obj = self.objective();
                halvings += 1;
            }
            if (obj - obj_old).abs() <= opts.outer_tol * (1.0 + obj_old.abs()) {
                converged = true;
                break;
            }
        }
        FitOut {
            theta: self.theta.clone(),
            objective: obj,
            loglik: self.loglik(),
            converged,
            n_outer,
            n_sweeps,
        }
    }

    /// Scores of every coordinate at the current predictor state.
    fn scores(&self) -> Vec<f64> {
        let p = self.std.p;
        let mut s = vec![0.0; self.n_coords()];
        for k in 0..p {
            let col = &self.std.cols[k];
            let mut g = 0.0;
            for i in 0..self.std.n {
                g += (self.z[i] - self.m[i]) * col[i];
            }
            s[k] = g;
        }
        for i in 0..self.std.n {
            s[p + i] = self.z[i] - self.m[i];
        }
        s
    }

    /// Null-anchored gamma grid for one `rho`, plus the null-fit
    /// coordinates as a warm start for the first path point.
    pub fn path_gammas(
        &mut self,
        rho: f64,
        n_gamma: usize,
        min_ratio: f64,
        opts: &FitOptions,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        if !rho.is_finite() || rho <= 0.0 || rho >= 1.0 {
            return Err(Error::InvalidPenalty(format!(
                "path construction needs rho strictly inside (0, 1), got {rho}"
            )));
        }
        if n_gamma == 0 {
            return Err(Error::InvalidConfig("need at least one gamma".into()));
        }
        if !(min_ratio > 0.0 && min_ratio <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "gamma floor ratio must lie in (0, 1], got {min_ratio}"
            )));
        }
        if self.z_total == 0.0 {
            return Err(Error::DegenerateData(
                "all included bins have zero counts; the penalty path is undefined".into(),
            ));
        }
        // The anchor scores are only as accurate as the null fit, so solve
        // it tighter than the caller asked for; the polynomial block is a
        // plain Newton problem and the extra iterations are cheap.
        let anchor_opts = FitOptions {
            outer_tol: opts.outer_tol.min(1e-14),
            kkt_tol: opts.kkt_tol.min(1e-9),
            ..opts.clone()
        };
        let null = self.fit_null(&anchor_opts);
        let scores = self.scores();
        let p = self.std.p;
        let mut gamma_max = 0.0f64;
        for (k, &s) in scores.iter().enumerate().skip(4) {
            let frac = if k < p { rho } else { 1.0 - rho };
            let needed = if k >= p && opts.nonneg_eta {
                s.max(0.0) / frac
            } else {
                s.abs() / frac
            };
            gamma_max = gamma_max.max(needed);
        }
        if gamma_max <= 0.0 {
            return Ok((vec![0.0], null.theta));
        }
        gamma_max *= 1.0 + GAMMA_MAX_SLACK;
        let gammas = if n_gamma == 1 {
            vec![gamma_max]
        } else {
            (0..n_gamma)
                .map(|t| gamma_max * min_ratio.powf(t as f64 / (n_gamma as f64 - 1.0)))
                .collect()
        };
        Ok((gammas, null.theta))
    }

    /// Packs a solution back onto the original scale and the full grid.
    pub fn finish(&self, out: FitOut) -> Coefficients {
        let p = self.std.p;
        let beta = self.std.destandardize(&out.theta[..p]);
        let mut eta = vec![0.0; self.full_len];
        for (r, &bin) in self.std.rows.iter().enumerate() {
            eta[bin] = out.theta[p + r];
        }
        Coefficients {
            beta,
            eta,
            objective: out.objective,
            loglik: out.loglik,
            converged: out.converged,
            n_outer: out.n_outer,
            n_sweeps: out.n_sweeps,
        }
    }

    /// Intercept-only solution for a segment whose included bins are all
    /// zero. The pseudo total of one half count keeps the fit finite.
    pub fn fit_degenerate(&mut self, penalty: &PenaltyConfig) -> FitOut {
        self.set_penalty(penalty.gamma, penalty.rho);
        self.theta = self.cold_start();
        self.predict();
        FitOut {
            theta: self.theta.clone(),
            objective: self.objective(),
            loglik: self.loglik(),
            converged: true,
            n_outer: 0,
            n_sweeps: 0,
        }
    }

    fn fit(&mut self, penalty: &PenaltyConfig, opts: &FitOptions, warm: Option<&[f64]>) -> Coefficients {
        let out = if self.z_total == 0.0 {
            self.fit_degenerate(penalty)
        } else {
            self.fit_theta(penalty, opts, warm)
        };
        self.finish(out)
    }
}

fn coord_violation(score: f64, theta: f64, v: f64, nonneg: bool) -> f64 {
    if v == 0.0 {
        return score.abs();
    }
    if nonneg {
        if theta > 0.0 {
            (score - v).abs()
        } else {
            (score - v).max(0.0)
        }
    } else if theta != 0.0 {
        (score - v * theta.signum()).abs()
    } else {
        (score.abs() - v).max(0.0)
    }
}
