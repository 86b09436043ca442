//! Acceptance gate: nine end-to-end checks, one printed verdict line each.
//!
//! Each check states its claim, measures it, prints `criterion N, <name>:
//! PASS/FAIL`, and then asserts, so a red run still shows the whole
//! scoreboard under `--nocapture`.

use ndarray::Array2;
use rand::Rng;
use statrs::function::gamma::ln_gamma;

use specseg::basis::{DesignMatrix, build_design, make_basis};
use specseg::io::{DetectReport, MctestReport, to_canonical_json};
use specseg::rng::stream_rng;
use specseg::search::ChangePointModel;
use specseg::{
    BinGrid, CollapsedData, CountTable, EffectSize, ExposureCurve, FitOptions, PenaltyConfig,
    SearchOptions, candidate_scan, detect, fit_penalized, fit_segment, make_preset,
    penalty_path, permutation_test, run_recovery_experiment, sample_poisson, score_segmentation,
    simulate_counts,
};

fn verdict(n: usize, name: &str, ok: bool, detail: &str) {
    println!(
        "criterion {n}, {name}: {} ({detail})",
        if ok { "PASS" } else { "FAIL" }
    );
}

/// Grid with `n_w` wavelength bins of width 0.2 starting at 1.65 and `n_t`
/// time bins of 2000 s.
fn small_grid(n_w: usize, n_t: usize) -> BinGrid {
    BinGrid::new(
        1.65,
        1.65 + 0.2 * n_w as f64,
        0.2,
        0.0,
        2000.0 * n_t as f64,
        2000.0,
    )
    .unwrap()
}

fn design_for(grid: &BinGrid, p: usize) -> DesignMatrix {
    let basis = make_basis(grid.w_lo, grid.w_hi, p).unwrap();
    build_design(&basis, grid).unwrap()
}

/// Poisson table with per-row means `mu` held constant over `n_t` columns.
fn poisson_table<R: Rng>(grid: &BinGrid, mu: &[f64], rng: &mut R) -> CountTable {
    let mut counts = Array2::<u64>::zeros((grid.n_wavelength, grid.n_time));
    for i in 0..grid.n_wavelength {
        for j in 0..grid.n_time {
            counts[[i, j]] = sample_poisson(rng, mu[i]);
        }
    }
    CountTable::new(grid.clone(), counts).unwrap()
}

/// Smooth strictly positive mean profile over `n` wavelength bins.
fn smooth_profile<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let a: f64 = rng.random_range(3.0..6.0);
    let b: f64 = rng.random_range(0.5..2.5);
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    (0..n)
        .map(|i| {
            let x = i as f64 / (n.max(2) - 1) as f64;
            a + b * (std::f64::consts::TAU * x + phase).sin()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Proximal-gradient oracle used by criteria 2 and 4.
//
// Maximizes sum_i [z_i u_i - reps * exp(u_i)] - sum_k v_k |theta_k| over the
// standardized design, with u_i = offset_i + x_i . theta + theta_{p+i}. The
// step is a soft-thresholded ascent with a majorization backtracking test, so
// every accepted move increases the penalized objective; run long enough this
// pins the optimum well below the comparison tolerances.
// ---------------------------------------------------------------------------

struct OracleProblem {
    z: Vec<f64>,
    offset: Vec<f64>,
    cols: Vec<Vec<f64>>,
    reps: f64,
    v: Vec<f64>,
}

impl OracleProblem {
    fn n(&self) -> usize {
        self.z.len()
    }

    fn p(&self) -> usize {
        self.cols.len()
    }

    fn predictor(&self, theta: &[f64]) -> Vec<f64> {
        let (n, p) = (self.n(), self.p());
        let mut u = self.offset.clone();
        for (k, col) in self.cols.iter().enumerate() {
            let t = theta[k];
            if t != 0.0 {
                for (ui, &x) in u.iter_mut().zip(col) {
                    *ui += t * x;
                }
            }
        }
        for i in 0..n {
            u[i] += theta[p + i];
        }
        u
    }

    fn smooth(&self, theta: &[f64]) -> f64 {
        let u = self.predictor(theta);
        let mut s = 0.0;
        for i in 0..self.n() {
            s += self.z[i] * u[i] - self.reps * u[i].exp();
        }
        s
    }

    fn penalty(&self, theta: &[f64]) -> f64 {
        theta
            .iter()
            .zip(&self.v)
            .map(|(&t, &v)| if t == 0.0 { 0.0 } else { v * t.abs() })
            .sum()
    }

    fn objective(&self, theta: &[f64]) -> f64 {
        self.smooth(theta) - self.penalty(theta)
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let (n, p) = (self.n(), self.p());
        let u = self.predictor(theta);
        let resid: Vec<f64> = (0..n).map(|i| self.z[i] - self.reps * u[i].exp()).collect();
        let mut g = vec![0.0; p + n];
        for (k, col) in self.cols.iter().enumerate() {
            g[k] = col.iter().zip(&resid).map(|(&x, &r)| x * r).sum();
        }
        g[p..].copy_from_slice(&resid);
        g
    }

    /// One backtracked proximal step from `point` along its gradient.
    /// Returns the new point and its smooth value, or `None` once the step
    /// size underflows.
    fn prox_step(&self, point: &[f64], step: &mut f64) -> Option<(Vec<f64>, f64)> {
        let dim = point.len();
        let g = self.gradient(point);
        let base = self.smooth(point);
        for _ in 0..200 {
            let mut cand = vec![0.0; dim];
            let mut dot_gd = 0.0;
            let mut dd = 0.0;
            for k in 0..dim {
                let raw = point[k] + *step * g[k];
                let thr = *step * self.v[k];
                cand[k] = if raw > thr {
                    raw - thr
                } else if raw < -thr {
                    raw + thr
                } else {
                    0.0
                };
                let d = cand[k] - point[k];
                dot_gd += g[k] * d;
                dd += d * d;
            }
            let cand_smooth = self.smooth(&cand);
            // Majorization test for a concave smooth part.
            if cand_smooth >= base + dot_gd - dd / (2.0 * *step) {
                return Some((cand, cand_smooth));
            }
            *step *= 0.5;
            if *step < 1e-280 {
                break;
            }
        }
        None
    }

    /// Long-run accelerated proximal ascent from zero: momentum in the
    /// Nesterov pattern, restarted whenever the penalized objective drops.
    /// Plain proximal steps crawl along the same basis-versus-offset
    /// valleys the production solver cuts with its block solve, so the
    /// acceleration is what makes an independent oracle affordable.
    fn solve(&self, max_iter: usize) -> Vec<f64> {
        let dim = self.p() + self.n();
        let mut x = vec![0.0; dim];
        let mut x_prev = x.clone();
        let mut momentum = 1.0f64;
        let mut step = 0.1;
        let mut best = self.objective(&x);
        let mut best_x = x.clone();
        let mut quiet = 0usize;
        for _ in 0..max_iter {
            let next_momentum = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
            let shrink = (momentum - 1.0) / next_momentum;
            let y: Vec<f64> = x
                .iter()
                .zip(&x_prev)
                .map(|(&a, &b)| a + shrink * (a - b))
                .collect();
            let Some((cand, _)) = self.prox_step(&y, &mut step) else {
                break;
            };
            let cand_obj = self.objective(&cand);
            let move_max = cand
                .iter()
                .zip(&x)
                .map(|(&a, &b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            if cand_obj < best {
                // Objective slipped: drop the momentum and retry plain.
                momentum = 1.0;
                x_prev = best_x.clone();
                x = best_x.clone();
            } else {
                x_prev = std::mem::replace(&mut x, cand);
                momentum = next_momentum;
                if cand_obj > best {
                    best = cand_obj;
                    best_x = x.clone();
                }
            }
            quiet = if move_max < 1e-14 { quiet + 1 } else { 0 };
            if quiet >= 30 {
                break;
            }
            step = (step * 1.1).min(4.0);
        }
        best_x
    }
}

/// Standardized-scale coordinates of a fitted model, reconstructed from the
/// raw-scale coefficients the library reports.
fn standardized_theta(
    fit: &specseg::Coefficients,
    std: &specseg::StandardizedDesign,
) -> Vec<f64> {
    let p = std.p;
    let mut theta = vec![0.0; p + std.n];
    theta[0] = fit.beta[0];
    for k in 1..p {
        theta[k] = fit.beta[k] * std.col_scale[k];
        theta[0] += fit.beta[k] * std.col_mean[k];
    }
    for (r, &bin) in std.rows.iter().enumerate() {
        theta[p + r] = fit.eta[bin];
    }
    theta
}

fn penalty_weights(p: usize, n: usize, gamma: f64, rho: f64) -> Vec<f64> {
    let mut v = vec![0.0; p + n];
    for k in 4..p {
        v[k] = gamma * rho;
    }
    for k in p..p + n {
        v[k] = gamma * (1.0 - rho);
    }
    v
}

/// Worst stationarity violation of `theta` for the oracle problem, measured
/// on exact scores: zero coordinates may not exceed their threshold, active
/// ones must sit on it.
fn kkt_violation(prob: &OracleProblem, theta: &[f64]) -> f64 {
    let g = prob.gradient(theta);
    let mut worst = 0.0f64;
    for k in 0..theta.len() {
        let v = prob.v[k];
        let viol = if v == 0.0 {
            g[k].abs()
        } else if theta[k] != 0.0 {
            (g[k] - v * theta[k].signum()).abs()
        } else {
            (g[k].abs() - v).max(0.0)
        };
        worst = worst.max(viol);
    }
    worst
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_1_description_length_identity() {
    // A single segment covering all J columns must satisfy
    // full = null + ln 1 + ln J, i.e. the full score exceeds the tuning
    // score by exactly ln J.
    let mut rng = stream_rng(101, 0);
    let opts = SearchOptions {
        rho_grid: vec![0.3, 0.7],
        n_gamma: 8,
        gamma_min_ratio: 1e-2,
        ..SearchOptions::default()
    };
    let mut worst = 0.0f64;
    for _ in 0..25 {
        let n_w = rng.random_range(8..=16);
        let n_t = rng.random_range(2..=10);
        let grid = small_grid(n_w, n_t);
        let mu = smooth_profile(n_w, &mut rng);
        let table = poisson_table(&grid, &mu, &mut rng);
        let exposure = ExposureCurve::uniform(&grid);
        let design = design_for(&grid, 5);
        let fit = fit_segment(&table, &exposure, &design, 0..n_t, &opts).unwrap();
        let full = score_segmentation(std::slice::from_ref(&fit));
        let diff = full.value - fit.score.value - (n_t as f64).ln();
        worst = worst.max(diff.abs());
    }
    let ok = worst <= 1e-10;
    verdict(
        1,
        "description-length identity",
        ok,
        &format!("max |full - null - ln J| = {worst:.3e} over 25 fits"),
    );
    assert!(ok);
}

#[test]
fn criterion_2_solver_matches_proximal_oracle() {
    let mut rng = stream_rng(202, 0);
    let mut worst_gap = 0.0f64;
    let mut worst_kkt = 0.0f64;
    for _ in 0..10 {
        let n_w = rng.random_range(5..=8);
        let grid = small_grid(n_w, 1);
        let mu = smooth_profile(n_w, &mut rng);
        let table = poisson_table(&grid, &mu, &mut rng);
        let exposure = ExposureCurve::uniform(&grid);
        let design = design_for(&grid, 5);
        let data = CollapsedData::from_table(&table, &exposure, 0..1).unwrap();

        let fit_opts = FitOptions::default();
        let gammas = penalty_path(&data, &design, 0.5, 12, 1e-2, &fit_opts).unwrap();
        let penalty = PenaltyConfig {
            gamma: gammas[gammas.len() / 2],
            rho: 0.5,
        };
        let fit = fit_penalized(&data, &design, &penalty, &fit_opts).unwrap();

        let std = design.standardize(&data.included).unwrap();
        let prob = OracleProblem {
            z: std.rows.iter().map(|&i| data.z[i] as f64).collect(),
            offset: std.rows.iter().map(|&i| data.offset[i]).collect(),
            cols: std.cols.clone(),
            reps: 1.0,
            v: penalty_weights(std.p, std.n, penalty.gamma, penalty.rho),
        };
        let oracle = prob.solve(300_000);
        // The library objective folds in the -ln z! terms; add them here.
        let lgz: f64 = prob.z.iter().map(|&z| ln_gamma(z + 1.0)).sum();
        let oracle_obj = prob.objective(&oracle) - lgz;
        worst_gap = worst_gap.max((fit.objective - oracle_obj).abs());
        worst_kkt = worst_kkt.max(kkt_violation(&prob, &standardized_theta(&fit, &std)));
    }
    let ok = worst_gap <= 1e-6 && worst_kkt <= 1e-5;
    verdict(
        2,
        "solver against proximal oracle",
        ok,
        &format!("max objective gap = {worst_gap:.3e}, max KKT residual = {worst_kkt:.3e}"),
    );
    assert!(ok);
}

#[test]
fn criterion_3_score_matches_finite_differences() {
    let mut rng = stream_rng(303, 0);
    let n_w = 8;
    let grid = small_grid(n_w, 2);
    let mu = smooth_profile(n_w, &mut rng);
    let table = poisson_table(&grid, &mu, &mut rng);
    let exposure = ExposureCurve::uniform(&grid);
    let design = design_for(&grid, 5);
    let data = CollapsedData::from_table(&table, &exposure, 0..2).unwrap();

    // The cubic columns reach ~1e2 on this grid; keep the predictor O(1)
    // by shrinking the higher-order draws.
    let scale = [1.0, 0.3, 0.05, 0.01, 0.01];
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let beta: Vec<f64> = scale
            .iter()
            .map(|&s| rng.random_range(-0.5..0.5) * s)
            .collect();
        let eta: Vec<f64> = (0..n_w).map(|_| rng.random_range(-0.4..0.4)).collect();
        let (_, score) = specseg::lasso::loglik_and_score(&data, &design, &beta, &eta).unwrap();
        for k in 0..5 + n_w {
            let h = 1e-5;
            let mut lo = (beta.clone(), eta.clone());
            let mut hi = (beta.clone(), eta.clone());
            if k < 5 {
                lo.0[k] -= h;
                hi.0[k] += h;
            } else {
                lo.1[k - 5] -= h;
                hi.1[k - 5] += h;
            }
            let (f_lo, _) = specseg::lasso::loglik_and_score(&data, &design, &lo.0, &lo.1).unwrap();
            let (f_hi, _) = specseg::lasso::loglik_and_score(&data, &design, &hi.0, &hi.1).unwrap();
            let fd = (f_hi - f_lo) / (2.0 * h);
            let rel = (fd - score[k]).abs() / score[k].abs().max(1.0);
            worst = worst.max(rel);
        }
    }
    let ok = worst <= 1e-4;
    verdict(
        3,
        "score against finite differences",
        ok,
        &format!("max relative error = {worst:.3e} over 20 points"),
    );
    assert!(ok);
}

#[test]
fn criterion_4_collapsed_fit_solves_the_full_problem() {
    let mut rng = stream_rng(404, 0);
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let n_w = rng.random_range(5..=8);
        let n_t = rng.random_range(2..=4);
        let grid = small_grid(n_w, n_t);
        let mu = smooth_profile(n_w, &mut rng);
        let table = poisson_table(&grid, &mu, &mut rng);
        let exposure = ExposureCurve::uniform(&grid);
        let design = design_for(&grid, 5);
        let data = CollapsedData::from_table(&table, &exposure, 0..n_t).unwrap();

        let fit_opts = FitOptions::default();
        let gammas = penalty_path(&data, &design, 0.4, 12, 1e-2, &fit_opts).unwrap();
        let penalty = PenaltyConfig {
            gamma: gammas[gammas.len() / 2],
            rho: 0.4,
        };
        let fit = fit_penalized(&data, &design, &penalty, &fit_opts).unwrap();

        // Column-resolved objective: same predictor in every time bin, the
        // exposure offset left per bin rather than folded into c * s.
        let std = design.standardize(&data.included).unwrap();
        let prob = OracleProblem {
            z: std.rows.iter().map(|&i| data.z[i] as f64).collect(),
            offset: std
                .rows
                .iter()
                .map(|&i| data.offset[i] - (n_t as f64).ln())
                .collect(),
            cols: std.cols.clone(),
            reps: n_t as f64,
            v: penalty_weights(std.p, std.n, penalty.gamma, penalty.rho),
        };
        let oracle = prob.solve(300_000);
        let gap = (prob.objective(&oracle) - prob.objective(&standardized_theta(&fit, &std))).abs();
        worst = worst.max(gap);
    }
    let ok = worst <= 1e-6;
    verdict(
        4,
        "collapsed and full objectives agree",
        ok,
        &format!("max full-objective gap = {worst:.3e} over 5 instances"),
    );
    assert!(ok);
}

#[test]
fn criterion_5_candidate_scan_matches_full_recomputation() {
    let mut rng = stream_rng(505, 0);
    let n_w = 12;
    let n_t = 12;
    let grid = small_grid(n_w, n_t);
    // Mild drift between halves so the scan has something to rank.
    let mu_a = smooth_profile(n_w, &mut rng);
    let mut counts = Array2::<u64>::zeros((n_w, n_t));
    for i in 0..n_w {
        for j in 0..n_t {
            let m = if j < 6 { mu_a[i] } else { mu_a[n_w - 1 - i] + 1.0 };
            counts[[i, j]] = sample_poisson(&mut rng, m);
        }
    }
    let table = CountTable::new(grid.clone(), counts).unwrap();
    let exposure = ExposureCurve::uniform(&grid);
    let design = design_for(&grid, 5);
    let opts = SearchOptions {
        rho_grid: vec![0.2, 0.5, 0.8],
        n_gamma: 15,
        gamma_min_ratio: 1e-2,
        ..SearchOptions::default()
    };

    let base = fit_segment(&table, &exposure, &design, 0..n_t, &opts).unwrap();
    let base_score = score_segmentation(std::slice::from_ref(&base));
    let model = ChangePointModel {
        boundaries: vec![],
        fits: vec![base.clone()],
        score: base_score,
        trace: vec![base_score.value],
    };
    let step = candidate_scan(&model, &table, &exposure, &design, &opts)
        .unwrap()
        .expect("splits of width >= 5 exist at J = 12");

    // Recompute every admissible split from scratch and compare.
    let mut best_edge = 0;
    let mut best_delta = f64::INFINITY;
    let mut scan_delta_err = 0.0f64;
    for edge in opts.min_width..=(n_t - opts.min_width) {
        let left = fit_segment(&table, &exposure, &design, 0..edge, &opts).unwrap();
        let right = fit_segment(&table, &exposure, &design, edge..n_t, &opts).unwrap();
        let delta = score_segmentation(&[left, right]).value - base_score.value;
        if delta < best_delta {
            best_delta = delta;
            best_edge = edge;
        }
        if edge == step.edge {
            scan_delta_err = (step.delta - delta).abs();
        }
    }
    let ok = step.edge == best_edge && scan_delta_err <= 1e-9 && {
        let applied = score_segmentation(&[step.left.clone(), step.right.clone()]).value;
        (applied - (base_score.value + step.delta)).abs() <= 1e-9
    };
    verdict(
        5,
        "candidate scan against full recomputation",
        ok,
        &format!(
            "scan edge {} vs exhaustive {}, delta error {scan_delta_err:.3e}",
            step.edge, best_edge
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_6_recovery_at_desk_scale() {
    let opts = SearchOptions::default();
    let run = |name: &str, effect: EffectSize| {
        let tf = make_preset(name, effect).unwrap();
        run_recovery_experiment(&tf, &opts, 50, 424242).unwrap()
    };

    let b1 = run("b1-j18", EffectSize::Strong);
    let b2 = run("b2-j21", EffectSize::Strong);
    let b3 = run("b3-j20", EffectSize::Strong);
    let weak = run("b2-j21", EffectSize::Weak);

    let rmse_ok = [&b2, &b3]
        .iter()
        .all(|r| r.rmse_boundaries.is_some_and(|e| e < 1.0));
    let ok = b1.percent_correct_b >= 95.0
        && b2.percent_correct_b >= 90.0
        && b3.percent_correct_b >= 90.0
        && rmse_ok
        && weak.percent_correct_b > 50.0
        && weak.percent_correct_b < 95.0;
    verdict(
        6,
        "segment recovery at desk scale",
        ok,
        &format!(
            "correct B: {:.0}% / {:.0}% / {:.0}% (B = 1/2/3), weak {:.0}%, rmse {:.3} / {:.3} bins",
            b1.percent_correct_b,
            b2.percent_correct_b,
            b3.percent_correct_b,
            weak.percent_correct_b,
            b2.rmse_boundaries.unwrap_or(f64::NAN),
            b3.rmse_boundaries.unwrap_or(f64::NAN),
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_7_permutation_test_calibration() {
    let n_w = 16;
    let opts = SearchOptions {
        rho_grid: vec![0.2, 0.5, 0.8],
        n_gamma: 12,
        gamma_min_ratio: 1e-2,
        ..SearchOptions::default()
    };

    // Size: homogeneous tables must rarely reject at alpha = 0.05.
    let grid = small_grid(n_w, 16);
    let exposure = ExposureCurve::uniform(&grid);
    let design = design_for(&grid, 5);
    let mut rejections = 0usize;
    for rep in 0..100u64 {
        let mut rng = stream_rng(707, rep);
        let mu = smooth_profile(n_w, &mut rng);
        let table = poisson_table(&grid, &mu, &mut rng);
        let test = permutation_test(&table, &exposure, &design, &opts, 99, 7000 + rep).unwrap();
        if test.p_value < 0.05 {
            rejections += 1;
        }
    }
    let size = rejections as f64 / 100.0;

    // Power: a strong planted flip must pin the p-value at its floor.
    let mut at_floor = 0usize;
    for rep in 0..50u64 {
        let mut rng = stream_rng(717, rep);
        let mut counts = Array2::<u64>::zeros((n_w, 16));
        for i in 0..n_w {
            for j in 0..16 {
                let m = if (j < 8) == (i < 8) { 9.0 } else { 1.0 };
                counts[[i, j]] = sample_poisson(&mut rng, m);
            }
        }
        let table = CountTable::new(grid.clone(), counts).unwrap();
        let test = permutation_test(&table, &exposure, &design, &opts, 99, 9000 + rep).unwrap();
        if test.p_value == 0.01 {
            at_floor += 1;
        }
    }

    let ok = size <= 0.11 && at_floor >= 45;
    verdict(
        7,
        "permutation test calibration",
        ok,
        &format!("size {size:.2} at alpha 0.05, floor p-value in {at_floor}/50 planted runs"),
    );
    assert!(ok);
}

#[test]
fn criterion_8_results_are_deterministic() {
    let mut rng = stream_rng(808, 0);
    let n_w = 16;
    let grid = small_grid(n_w, 12);
    let mut counts = Array2::<u64>::zeros((n_w, 12));
    for i in 0..n_w {
        for j in 0..12 {
            let m = if (j < 6) == (i < 8) { 8.0 } else { 2.0 };
            counts[[i, j]] = sample_poisson(&mut rng, m);
        }
    }
    let table = CountTable::new(grid.clone(), counts).unwrap();
    let exposure = ExposureCurve::uniform(&grid);
    let design = design_for(&grid, 5);
    let opts = SearchOptions {
        rho_grid: vec![0.2, 0.5, 0.8],
        n_gamma: 12,
        gamma_min_ratio: 1e-2,
        ..SearchOptions::default()
    };

    let detect_json = |table: &CountTable| {
        let model = detect(table, &exposure, &design, &opts).unwrap();
        to_canonical_json(&DetectReport::from_model(&model, &grid, &design, &opts)).unwrap()
    };
    let mctest_json = |table: &CountTable| {
        let model = detect(table, &exposure, &design, &opts).unwrap();
        let test = permutation_test(table, &exposure, &design, &opts, 19, 5).unwrap();
        let base = DetectReport::from_model(&model, &grid, &design, &opts);
        to_canonical_json(&MctestReport::new(&test, base)).unwrap()
    };

    let d1 = detect_json(&table);
    let d2 = detect_json(&table);
    let m1 = mctest_json(&table);
    let m2 = mctest_json(&table);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(3)
        .build()
        .unwrap();
    let (d3, m3) = pool.install(|| (detect_json(&table), mctest_json(&table)));

    let ok = d1 == d2 && d1 == d3 && m1 == m2 && m1 == m3;
    verdict(
        8,
        "byte-identical reruns",
        ok,
        &format!(
            "detect rerun {} / pool {}, mctest rerun {} / pool {}",
            d1 == d2,
            d1 == d3,
            m1 == m2,
            m1 == m3
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_9_simulator_is_equidispersed() {
    let tf = make_preset("b1-j18", EffectSize::Strong).unwrap();
    let (n_w, n_t) = (tf.grid.n_wavelength, tf.grid.n_time);
    let reps = 200usize;
    let mut sum = vec![0.0f64; n_w * n_t];
    let mut sum_sq = vec![0.0f64; n_w * n_t];
    for rep in 0..reps {
        let table = simulate_counts(&tf, rep as u64).unwrap();
        for i in 0..n_w {
            for j in 0..n_t {
                let y = table.counts[[i, j]] as f64;
                sum[i * n_t + j] += y;
                sum_sq[i * n_t + j] += y * y;
            }
        }
    }
    let mut total_mean = 0.0;
    let mut total_var = 0.0;
    let n = reps as f64;
    for k in 0..n_w * n_t {
        let mean = sum[k] / n;
        total_mean += mean;
        total_var += (sum_sq[k] - n * mean * mean) / (n - 1.0);
    }
    let ratio = total_var / total_mean;
    let ok = (0.9..=1.1).contains(&ratio);
    verdict(
        9,
        "simulator equidispersion",
        ok,
        &format!("pooled variance/mean = {ratio:.4} over {reps} replicates"),
    );
    assert!(ok);
}
