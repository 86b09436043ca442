//! Monte Carlo significance test for detected change points.
//!
//! Under the no-change null the time columns are exchangeable, so the null
//! distribution of the search's score improvement is estimated by rerunning
//! the full detection on column-permuted tables. The observed improvement
//! `m* = mdl(best segmentation) - mdl(single segment)` is never positive;
//! the test asks how often random relabelings do as well.

use ndarray::Axis;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::DesignMatrix;
use crate::data::{CountTable, ExposureCurve};
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::search::detect;
use crate::segment::SearchOptions;

/// Outcome of the permutation test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermTestResult {
    /// Observed score improvement over the single-segment model (<= 0).
    pub m_star: f64,
    /// Improvement per permuted replicate, in replicate order.
    pub replicates: Vec<f64>,
    /// Add-one Monte Carlo p-value: the fraction of replicates whose score
    /// drop is at least as large as the observed one (`m_k <= m_star`).
    pub p_value: f64,
    pub n_sim: usize,
    pub seed: u64,
}

impl PermTestResult {
    /// Evidence for at least one change point at level `alpha`.
    pub fn reject(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// Reorders time columns so that new column `j` is old column `perm[j]`.
pub fn permute_columns(table: &CountTable, perm: &[usize]) -> Result<CountTable> {
    let j = table.grid.n_time;
    if perm.len() != j {
        return Err(Error::Mismatch(format!(
            "permutation length {} does not match {} time bins",
            perm.len(),
            j
        )));
    }
    let mut seen = vec![false; j];
    for &q in perm {
        if q >= j || seen[q] {
            return Err(Error::Mismatch(
                "column permutation must visit each time bin exactly once".into(),
            ));
        }
        seen[q] = true;
    }
    let counts = table.counts.select(Axis(1), perm);
    CountTable::new(table.grid.clone(), counts)
}

/// Runs the full detection on `n_sim` column-permuted copies of the table
/// and compares the observed improvement against the permuted ones.
///
/// Replicate `k` draws its permutation from RNG stream `k` (1-based) of
/// `seed`, so individual replicates can be reproduced and the result does
/// not depend on thread count. The single-segment score is invariant under
/// column permutation, so each improvement is measured against the
/// replicate's own single-segment fit; this is the same quantity up to
/// summation order, and it keeps a replicate whose search accepts no split
/// at exactly zero instead of a rounding-sized residue.
pub fn permutation_test(
    table: &CountTable,
    exposure: &ExposureCurve,
    design: &DesignMatrix,
    opts: &SearchOptions,
    n_sim: usize,
    seed: u64,
) -> Result<PermTestResult> {
    if n_sim == 0 {
        return Err(Error::InvalidConfig(
            "permutation test needs at least one replicate".into(),
        ));
    }
    let base = detect(table, exposure, design, opts)?;
    let single = base.trace[0];
    let m_star = base.score.value - single;
    debug_assert!(m_star <= 0.0);

    let j = table.grid.n_time;
    let replicates: Vec<f64> = (1..=n_sim as u64)
        .into_par_iter()
        .map(|k| -> Result<f64> {
            let mut rng = stream_rng(seed, k);
            let mut perm: Vec<usize> = (0..j).collect();
            perm.shuffle(&mut rng);
            let shuffled = permute_columns(table, &perm)?;
            let model = detect(&shuffled, exposure, design, opts)?;
            Ok(model.score.value - model.trace[0])
        })
        .collect::<Result<Vec<_>>>()?;

    // Improvements are nonpositive and more negative means stronger, so a
    // replicate as extreme as the observation satisfies m_k <= m_star.
    let exceed = replicates.iter().filter(|&&m| m <= m_star).count();
    let p_value = (exceed + 1) as f64 / (n_sim + 1) as f64;
    Ok(PermTestResult {
        m_star,
        replicates,
        p_value,
        n_sim,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_design, make_basis};
    use crate::data::BinGrid;
    use ndarray::Array2;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn tiny_options() -> SearchOptions {
        SearchOptions {
            rho_grid: vec![0.3, 0.7],
            n_gamma: 8,
            gamma_min_ratio: 1e-3,
            ..SearchOptions::default()
        }
    }

    fn table_from(counts: Array2<u64>) -> (CountTable, ExposureCurve, DesignMatrix) {
        let (n, j) = counts.dim();
        let grid = BinGrid::new(0.0, n as f64, 1.0, 0.0, j as f64, 1.0).unwrap();
        let exposure = ExposureCurve::uniform(&grid);
        let cfg = make_basis(0.0, n as f64, 5).unwrap();
        let design = build_design(&cfg, &grid).unwrap();
        (CountTable::new(grid, counts).unwrap(), exposure, design)
    }

    #[test]
    fn permuting_preserves_column_multiset() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let counts = Array2::from_shape_fn((5, 8), |_| rng.random_range(0..9));
        let (table, _, _) = table_from(counts);
        let perm = vec![3usize, 0, 7, 1, 6, 2, 5, 4];
        let shuffled = permute_columns(&table, &perm).unwrap();
        for (j, &q) in perm.iter().enumerate() {
            for i in 0..5 {
                assert_eq!(shuffled.counts[[i, j]], table.counts[[i, q]]);
            }
        }
        assert_eq!(shuffled.total(), table.total());

        assert!(permute_columns(&table, &[0, 1]).is_err());
        assert!(permute_columns(&table, &[0, 0, 2, 3, 4, 5, 6, 7]).is_err());
        assert!(permute_columns(&table, &[0, 1, 2, 3, 4, 5, 6, 8]).is_err());
    }

    #[test]
    fn homogeneous_data_keeps_m_star_at_zero_scale() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let counts = Array2::from_shape_fn((6, 10), |_| rng.random_range(2..6));
        let (table, exposure, design) = table_from(counts);
        let res =
            permutation_test(&table, &exposure, &design, &tiny_options(), 5, 42).unwrap();
        assert!(res.m_star <= 0.0);
        assert_eq!(res.replicates.len(), 5);
        for &m in &res.replicates {
            assert!(m <= 0.0, "every replicate improvement is nonpositive");
        }
        let exceed = res.replicates.iter().filter(|&&m| m <= res.m_star).count();
        assert_eq!(res.p_value, (exceed + 1) as f64 / 6.0);
        assert!(res.p_value > 0.0 && res.p_value <= 1.0);
    }

    #[test]
    fn strong_shift_earns_a_small_p_value() {
        let counts = Array2::from_shape_fn((6, 12), |(_, t)| if t < 6 { 1 } else { 14 });
        let (table, exposure, design) = table_from(counts);
        let res =
            permutation_test(&table, &exposure, &design, &tiny_options(), 9, 7).unwrap();
        assert!(res.m_star < 0.0, "shift should be detected");
        assert!(res.p_value <= 0.2, "p = {}", res.p_value);
    }

    #[test]
    fn result_is_reproducible_and_thread_independent() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let counts = Array2::from_shape_fn((5, 10), |_| rng.random_range(0..7));
        let (table, exposure, design) = table_from(counts);
        let opts = tiny_options();
        let a = permutation_test(&table, &exposure, &design, &opts, 4, 99).unwrap();
        let b = permutation_test(&table, &exposure, &design, &opts, 4, 99).unwrap();
        assert_eq!(a, b);

        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(2)
            .build()
            .unwrap();
        let c = pool
            .install(|| permutation_test(&table, &exposure, &design, &opts, 4, 99))
            .unwrap();
        assert_eq!(a, c);
    }
}
