//! Synthetic piecewise-homogeneous generators and the recovery harness.
//!
//! A test function fixes a grid, an exposure curve, and one spectrum per
//! time segment; simulation draws each cell of the count table from a
//! Poisson law with the implied mean. The harness reruns the full
//! detection on many simulated tables and reports how often the true
//! segment count and boundary positions come back.

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::basis::{BasisConfig, evaluate_basis, make_basis};
use crate::data::{BinGrid, CountTable, ExposureCurve};
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::search::detect;
use crate::segment::SearchOptions;

/// One Poisson draw with the given mean.
///
/// Small means use sequential inversion (cdf walk). Large means use the
/// transformed-rejection method of Hormann (PTRS), whose acceptance rate
/// stays above ~0.88 for all means >= 10; both paths consume a variable
/// number of uniforms, so callers that need stream independence should give
/// each replicate its own stream rather than counting draws.
pub fn sample_poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    assert!(mean.is_finite() && mean >= 0.0, "mean must be finite and >= 0");
    if mean == 0.0 {
        return 0;
    }
    if mean < 10.0 {
        // Inversion: walk the cdf until it passes a uniform draw. The cap
        // is unreachable for mean < 10 (tail mass below 1e-100) but keeps
        // the loop finite under fp pathologies.
        let mut p = (-mean).exp();
        let mut cdf = p;
        let u: f64 = rng.random();
        let mut k = 0u64;
        while u > cdf && k < 400 {
            k += 1;
            p *= mean / k as f64;
            cdf += p;
        }
        k
    } else {
        // PTRS constants from Hormann's transformed rejection fit.
        let b = 0.931 + 2.53 * mean.sqrt();
        let a = -0.059 + 0.02483 * b;
        let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
        let v_r = 0.9277 - 3.6224 / (b - 2.0);
        let ln_mean = mean.ln();
        loop {
            let mut v: f64 = rng.random();
            if v <= 0.86 * v_r {
                // Fast acceptance region, no logarithms needed.
                let u = v / v_r - 0.43;
                let us = 0.5 - u.abs();
                return ((2.0 * a / us + b) * u + mean + 0.445).floor() as u64;
            }
            let u: f64 = if v >= v_r {
                rng.random::<f64>() - 0.5
            } else {
                let w = v / v_r - 0.93;
                let w = 0.5f64.copysign(w) - w;
                v = v_r * rng.random::<f64>();
                w
            };
            let us = 0.5 - u.abs();
            if us < 0.013 && v > us {
                continue;
            }
            let k = ((2.0 * a / us + b) * u + mean + 0.445).floor();
            if k < 0.0 {
                continue;
            }
            let lhs = (v * inv_alpha / (a / (us * us) + b)).ln();
            let rhs = k * ln_mean - mean - ln_gamma(k + 1.0);
            if lhs <= rhs {
                return k as u64;
            }
        }
    }
}

/// Spectrum of one time segment in model coordinates: basis weights plus
/// one narrow-line log-bump per wavelength bin (zero almost everywhere).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSpectrum {
    pub beta: Vec<f64>,
    pub eta: Vec<f64>,
}

/// A complete generator: grid, exposure, basis, and one spectrum per
/// segment, with `boundaries` the interior segment ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub grid: BinGrid,
    pub exposure: ExposureCurve,
    pub basis: BasisConfig,
    pub boundaries: Vec<usize>,
    pub spectra: Vec<SegmentSpectrum>,
}

impl TestFunction {
    /// Number of segments.
    pub fn b(&self) -> usize {
        self.spectra.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.exposure.validate_against(&self.grid)?;
        let j = self.grid.n_time;
        let mut prev = 0usize;
        for &edge in &self.boundaries {
            if edge <= prev || edge >= j {
                return Err(Error::InvalidSegment(format!(
                    "boundary {edge} is out of order for {j} time bins"
                )));
            }
            prev = edge;
        }
        if self.spectra.len() != self.boundaries.len() + 1 {
            return Err(Error::InvalidSegment(format!(
                "{} boundaries need {} spectra, got {}",
                self.boundaries.len(),
                self.boundaries.len() + 1,
                self.spectra.len()
            )));
        }
        for (k, sp) in self.spectra.iter().enumerate() {
            if sp.beta.len() != self.basis.p {
                return Err(Error::Mismatch(format!(
                    "segment {k} has {} basis weights, basis has {}",
                    sp.beta.len(),
                    self.basis.p
                )));
            }
            if sp.eta.len() != self.grid.n_wavelength {
                return Err(Error::Mismatch(format!(
                    "segment {k} has {} line coefficients, grid has {} bins",
                    sp.eta.len(),
                    self.grid.n_wavelength
                )));
            }
            if sp.beta.iter().chain(sp.eta.iter()).any(|v| !v.is_finite()) {
                return Err(Error::InvalidSegment(format!(
                    "segment {k} has non-finite coefficients"
                )));
            }
        }
        Ok(())
    }

    /// Segment index owning time column `j`.
    pub fn segment_of(&self, j: usize) -> usize {
        self.boundaries.iter().filter(|&&e| e <= j).count()
    }

    /// Expected photon rate `lambda(w_i)` for a segment, over all bins.
    pub fn spectrum(&self, seg: usize) -> Vec<f64> {
        let sp = &self.spectra[seg];
        self.grid
            .wavelength_centers()
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let row = evaluate_basis(&self.basis, w);
                let mut u = sp.eta[i];
                for (k, &x) in row.iter().enumerate() {
                    u += x * sp.beta[k];
                }
                u.exp()
            })
            .collect()
    }

    /// Poisson mean of every cell; zero where the exposure excludes a bin.
    pub fn mean_table(&self) -> Array2<f64> {
        let n = self.grid.n_wavelength;
        let j = self.grid.n_time;
        let per_segment: Vec<Vec<f64>> = (0..self.b()).map(|b| self.spectrum(b)).collect();
        Array2::from_shape_fn((n, j), |(i, t)| {
            if self.exposure.included[i] {
                self.exposure.s[i] * per_segment[self.segment_of(t)][i]
            } else {
                0.0
            }
        })
    }
}

/// Draws one count table from the generator, consuming `rng` cell by cell
/// in row-major order (wavelength outer, time inner).
pub fn simulate_counts_rng<R: Rng + ?Sized>(tf: &TestFunction, rng: &mut R) -> Result<CountTable> {
    tf.validate()?;
    let means = tf.mean_table();
    let counts = Array2::from_shape_fn(means.dim(), |(i, j)| sample_poisson(rng, means[[i, j]]));
    CountTable::new(tf.grid.clone(), counts)
}

/// Draws one count table using stream 0 of `seed`.
pub fn simulate_counts(tf: &TestFunction, seed: u64) -> Result<CountTable> {
    let mut rng = stream_rng(seed, 0);
    simulate_counts_rng(tf, &mut rng)
}

/// Joins generators end to end along the time axis. Every part must share
/// the wavelength grid, time resolution, and exposure; each joint becomes a
/// boundary of the result, so segment counts add up.
pub fn concat_test_functions(parts: &[TestFunction]) -> Result<TestFunction> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidConfig("nothing to concatenate".into()))?;
    first.validate()?;
    let g0 = &first.grid;
    let mut j_total = g0.n_time;
    for part in &parts[1..] {
        part.validate()?;
        let g = &part.grid;
        let same_w = g.w_lo == g0.w_lo
            && g.w_hi == g0.w_hi
            && g.delta_w == g0.delta_w
            && g.n_wavelength == g0.n_wavelength;
        if !same_w || g.delta_t != g0.delta_t {
            return Err(Error::Mismatch(
                "concatenated parts must share wavelength grid and time resolution".into(),
            ));
        }
        if part.exposure != first.exposure {
            return Err(Error::Mismatch(
                "concatenated parts must share the exposure curve".into(),
            ));
        }
        if part.basis != first.basis {
            return Err(Error::Mismatch(
                "concatenated parts must share the basis".into(),
            ));
        }
        j_total += g.n_time;
    }

    let grid = BinGrid::new(
        g0.w_lo,
        g0.w_hi,
        g0.delta_w,
        g0.t_lo,
        g0.t_lo + j_total as f64 * g0.delta_t,
        g0.delta_t,
    )?;
    let mut boundaries = Vec::new();
    let mut spectra = Vec::new();
    let mut offset = 0usize;
    for part in parts {
        for &e in &part.boundaries {
            boundaries.push(offset + e);
        }
        spectra.extend(part.spectra.iter().cloned());
        offset += part.grid.n_time;
        if offset < j_total {
            boundaries.push(offset);
        }
    }
    let tf = TestFunction {
        grid,
        exposure: first.exposure.clone(),
        basis: first.basis.clone(),
        boundaries,
        spectra,
    };
    tf.validate()?;
    Ok(tf)
}

/// Magnitude of the between-segment differences in the bundled generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EffectSize {
    /// Flux and tilt jumps large enough for near-certain recovery.
    Strong,
    /// Jumps near the detection threshold.
    Weak,
}

impl EffectSize {
    fn jump(self) -> f64 {
        match self {
            EffectSize::Strong => 0.40,
            EffectSize::Weak => 0.12,
        }
    }

    fn tilt(self) -> f64 {
        match self {
            EffectSize::Strong => 0.35,
            EffectSize::Weak => 0.10,
        }
    }

    fn line_height(self) -> f64 {
        match self {
            EffectSize::Strong => 1.3,
            EffectSize::Weak => 0.8,
        }
    }
}

/// Preset wavelength range (long-wavelength dispersive band).
const PRESET_W_LO: f64 = 1.65;
const PRESET_W_HI: f64 = 30.05;
const PRESET_DELTA_W: f64 = 0.2;
const PRESET_DELTA_T: f64 = 2000.0;
const PRESET_P: usize = 34;
/// Narrow-line positions (bin indices) used by the presets.
const LINE_BINS: [usize; 3] = [66, 86, 52];

/// Monomial coefficients of `level + slope*x + curve*x^2 + cube*x^3` with
/// `x = (w - mid) / half`, expanded to powers of `w`.
fn scaled_cubic(level: f64, slope: f64, curve: f64, cube: f64, mid: f64, half: f64) -> [f64; 4] {
    let (m, h) = (mid, half);
    [
        level - slope * m / h + curve * m * m / (h * h) - cube * m * m * m / (h * h * h),
        slope / h - 2.0 * curve * m / (h * h) + 3.0 * cube * m * m / (h * h * h),
        curve / (h * h) - 3.0 * cube * m / (h * h * h),
        cube / (h * h * h),
    ]
}

fn preset_grid(j: usize) -> BinGrid {
    BinGrid::new(
        PRESET_W_LO,
        PRESET_W_HI,
        PRESET_DELTA_W,
        0.0,
        j as f64 * PRESET_DELTA_T,
        PRESET_DELTA_T,
    )
    .expect("preset grid is well formed")
}

/// Smooth effective-area-like exposure: a broad log-normal bump peaking
/// near 8 in wavelength, times the bin area.
fn preset_exposure(grid: &BinGrid) -> ExposureCurve {
    let s = grid
        .wavelength_centers()
        .iter()
        .map(|&w| {
            let z = (w / 8.0).ln() / 0.85;
            let area = 2.0 + 23.0 * (-0.5 * z * z).exp();
            grid.delta_t * grid.delta_w * area
        })
        .collect();
    ExposureCurve::from_values(s).expect("preset exposure is positive")
}

/// One preset segment: baseline soft spectrum with a flux shift, a tilt
/// shift, and optional narrow lines.
fn preset_segment(
    basis: &BasisConfig,
    n: usize,
    level_shift: f64,
    slope_shift: f64,
    lines: &[usize],
    line_height: f64,
) -> SegmentSpectrum {
    let mid = 0.5 * (PRESET_W_LO + PRESET_W_HI);
    let half = 0.5 * (PRESET_W_HI - PRESET_W_LO);
    let poly = scaled_cubic(
        -8.1 + level_shift,
        -0.45 + slope_shift,
        -0.55,
        0.15,
        mid,
        half,
    );
    let mut beta = vec![0.0; basis.p];
    beta[..4].copy_from_slice(&poly);
    let mut eta = vec![0.0; n];
    for &b in lines {
        eta[b] = line_height;
    }
    SegmentSpectrum { beta, eta }
}

/// Names accepted by [`make_preset`].
pub fn preset_names() -> &'static [&'static str] {
    &[
        "b1-j18", "b1-j32", "b2-j20", "b2-j21", "b2-j23", "b3-j20", "b3-j49", "b5-j69",
    ]
}

/// Builds one of the bundled generators. Names encode the true segment
/// count and the number of time bins (`b2-j21` has one change point in 21
/// columns). Segment differences alternate in flux and tilt with the
/// magnitude set by `effect`.
pub fn make_preset(name: &str, effect: EffectSize) -> Result<TestFunction> {
    let (j, boundaries, lines): (usize, Vec<usize>, Vec<Vec<usize>>) = match name {
        "b1-j18" => (18, vec![], vec![vec![LINE_BINS[0]]]),
        "b1-j32" => (32, vec![], vec![vec![LINE_BINS[1]]]),
        "b2-j20" => (
            20,
            vec![10],
            vec![vec![LINE_BINS[0], LINE_BINS[1]], vec![LINE_BINS[0]]],
        ),
        "b2-j21" => (21, vec![13], vec![vec![], vec![LINE_BINS[1]]]),
        "b2-j23" => (23, vec![15], vec![vec![], vec![]]),
        "b3-j20" => (20, vec![7, 14], vec![vec![], vec![], vec![]]),
        "b3-j49" => (49, vec![16, 33], vec![vec![], vec![], vec![]]),
        "b5-j69" => {
            let a = preset_with(21, vec![13], vec![vec![], vec![]], effect, 0)?;
            let b = preset_with(20, vec![], vec![vec![]], effect, 2)?;
            let c = preset_with(
                28,
                vec![15],
                vec![vec![LINE_BINS[1], LINE_BINS[2]], vec![LINE_BINS[0]]],
                effect,
                1,
            )?;
            return concat_test_functions(&[a, b, c]);
        }
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown preset '{other}'; known: {}",
                preset_names().join(", ")
            )));
        }
    };
    preset_with(j, boundaries, lines, effect, 0)
}

/// Shared preset assembly; `phase` staggers which direction the first
/// segment jumps so concatenated parts do not cancel at the joints.
fn preset_with(
    j: usize,
    boundaries: Vec<usize>,
    lines: Vec<Vec<usize>>,
    effect: EffectSize,
    phase: usize,
) -> Result<TestFunction> {
    let grid = preset_grid(j);
    let exposure = preset_exposure(&grid);
    let basis = make_basis(PRESET_W_LO, PRESET_W_HI, PRESET_P)?;
    let n = grid.n_wavelength;
    let spectra = lines
        .iter()
        .enumerate()
        .map(|(k, seg_lines)| {
            let step = (k + phase) as f64;
            // Alternate up/down so consecutive segments always differ.
            let sign = if (k + phase) % 2 == 0 { 1.0 } else { -1.0 };
            let level = 0.5 * effect.jump() * sign * (1.0 + 0.2 * step);
            let slope = 0.5 * effect.tilt() * -sign;
            preset_segment(&basis, n, level, slope, seg_lines, effect.line_height())
        })
        .collect();
    let tf = TestFunction {
        grid,
        exposure,
        basis,
        boundaries,
        spectra,
    };
    tf.validate()?;
    Ok(tf)
}

/// Result of one simulated detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub b_hat: usize,
    pub boundaries: Vec<usize>,
}

/// Aggregate recovery performance over simulated replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub n_replicates: usize,
    /// Replicates whose detected segment count matched the truth.
    pub n_correct_b: usize,
    pub percent_correct_b: f64,
    /// Root mean squared boundary error in time-bin units, pooled over the
    /// boundaries of replicates with the correct segment count. `Some(0.0)`
    /// for a boundary-free truth with at least one correct replicate;
    /// `None` when no replicate got the segment count right.
    pub rmse_boundaries: Option<f64>,
    pub outcomes: Vec<ReplicateOutcome>,
    pub seed: u64,
}

/// Simulates `n_replicates` tables from the generator (replicate `r` uses
/// RNG stream `r`), runs the full detection on each, and scores recovery
/// of the true segmentation.
pub fn run_recovery_experiment(
    tf: &TestFunction,
    opts: &SearchOptions,
    n_replicates: usize,
    seed: u64,
) -> Result<RecoveryReport> {
    if n_replicates == 0 {
        return Err(Error::InvalidConfig("need at least one replicate".into()));
    }
    tf.validate()?;
    opts.validate()?;
    let design = crate::basis::build_design(&tf.basis, &tf.grid)?;

    let outcomes: Vec<ReplicateOutcome> = (0..n_replicates as u64)
        .into_par_iter()
        .map(|r| -> Result<ReplicateOutcome> {
            let mut rng = stream_rng(seed, r);
            let table = simulate_counts_rng(tf, &mut rng)?;
            let model = detect(&table, &tf.exposure, &design, opts)?;
            Ok(ReplicateOutcome {
                b_hat: model.b(),
                boundaries: model.boundaries,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let truth_b = tf.b();
    let correct: Vec<&ReplicateOutcome> =
        outcomes.iter().filter(|o| o.b_hat == truth_b).collect();
    let n_correct_b = correct.len();
    let rmse_boundaries = if n_correct_b == 0 {
        None
    } else if tf.boundaries.is_empty() {
        Some(0.0)
    } else {
        let mut sq = 0.0;
        let mut terms = 0usize;
        for o in &correct {
            for (e_hat, e) in o.boundaries.iter().zip(&tf.boundaries) {
                let d = *e_hat as f64 - *e as f64;
                sq += d * d;
                terms += 1;
            }
        }
        Some((sq / terms as f64).sqrt())
    };
    Ok(RecoveryReport {
        n_replicates,
        n_correct_b,
        percent_correct_b: 100.0 * n_correct_b as f64 / n_replicates as f64,
        rmse_boundaries,
        outcomes,
        seed,
    })
}
