//! Greedy change-point search over the time axis.
//!
//! Starting from one segment, every admissible split of every current
//! segment is scored and the best strict improvement in total description
//! length is applied, until no split improves. Only the split segment is
//! refit at each step; fits are keyed by absolute column range and cached,
//! since a segment fit depends on nothing outside its own columns.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::DesignMatrix;
use crate::data::{CountTable, ExposureCurve};
use crate::error::{Error, Result};
use crate::mdl::{MdlFullScore, mdl_full};
use crate::segment::{SearchOptions, SegmentFit, fit_segment};

/// A fitted segmentation: interior boundaries (ascending, exclusive ends of
/// all but the last segment), one tuned fit per segment, and the total
/// description length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangePointModel {
    pub boundaries: Vec<usize>,
    pub fits: Vec<SegmentFit>,
    pub score: MdlFullScore,
    /// Total score after the initial fit and after each accepted split.
    pub trace: Vec<f64>,
}

impl ChangePointModel {
    /// Number of segments.
    pub fn b(&self) -> usize {
        self.fits.len()
    }
}

/// The best admissible split found by one scan.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateStep {
    /// Index of the segment being split.
    pub seg_index: usize,
    /// New interior boundary (absolute column index).
    pub edge: usize,
    /// Change in total description length if applied; improvements are
    /// negative.
    pub delta: f64,
    pub left: SegmentFit,
    pub right: SegmentFit,
}

/// Total description length of a list of segment fits.
pub fn score_segmentation(fits: &[SegmentFit]) -> MdlFullScore {
    let scores: Vec<_> = fits.iter().map(|f| f.score).collect();
    let lengths: Vec<_> = fits.iter().map(|f| f.c).collect();
    mdl_full(&scores, &lengths)
}

type FitKey = (usize, usize);

fn admissible_splits(fits: &[SegmentFit], min_width: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (b, f) in fits.iter().enumerate() {
        if f.c < 2 * min_width {
            continue;
        }
        for edge in (f.start + min_width)..=(f.end - min_width) {
            out.push((b, edge));
        }
    }
    out
}

/// One scan over every admissible split of the current segmentation.
/// Returns the lowest-delta candidate (ties break toward the earliest
/// edge) and every fit computed along the way, keyed for the cache.
fn scan_cached(
    fits: &[SegmentFit],
    table: &CountTable,
    exposure: &ExposureCurve,
    design: &DesignMatrix,
    opts: &SearchOptions,
    cache: &HashMap<FitKey, SegmentFit>,
) -> Result<(Option<CandidateStep>, Vec<(FitKey, SegmentFit)>)> {
    let current = score_segmentation(fits);
    let candidates = admissible_splits(fits, opts.min_width);

    struct Scanned {
        seg_index: usize,
        edge: usize,
        delta: f64,
        left: SegmentFit,
        right: SegmentFit,
    }

    let scanned: Vec<Scanned> = candidates
        .par_iter()
        .map(|&(b, edge)| -> Result<Scanned> {
            let (s, e) = (fits[b].start, fits[b].end);
            let left = match cache.get(&(s, edge)) {
                Some(f) => f.clone(),
                None => fit_segment(table, exposure, design, s..edge, opts)?,
            };
            let right = match cache.get(&(edge, e)) {
                Some(f) => f.clone(),
                None => fit_segment(table, exposure, design, edge..e, opts)?,
            };
            let mut trial: Vec<SegmentFit> = Vec::with_capacity(fits.len() + 1);
            trial.extend(fits[..b].iter().cloned());
            trial.push(left.clone());
            trial.push(right.clone());
            trial.extend(fits[b + 1..].iter().cloned());
            let delta = score_segmentation(&trial).value - current.value;
            Ok(Scanned {
                seg_index: b,
                edge,
                delta,
                left,
                right,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut computed = Vec::with_capacity(2 * scanned.len());
    let mut best: Option<&Scanned> = None;
    for sc in &scanned {
        computed.push(((sc.left.start, sc.left.end), sc.left.clone()));
        computed.push(((sc.right.start, sc.right.end), sc.right.clone()));
        if best.is_none_or(|b| sc.delta < b.delta) {
            best = Some(sc);
        }
    }
    let step = best.map(|sc| CandidateStep {
        seg_index: sc.seg_index,
        edge: sc.edge,
        delta: sc.delta,
        left: sc.left.clone(),
        right: sc.right.clone(),
    });
    Ok((step, computed))
}

/// Scans the current model for its best admissible split. `None` when no
/// segment is wide enough to split.
pub fn candidate_scan(
    model: &ChangePointModel,
    table: &CountTable,
    exposure: &ExposureCurve,
    design: &DesignMatrix,
    opts: &SearchOptions,
) -> Result<Option<CandidateStep>> {
    opts.validate()?;
    let mut cache = HashMap::new();
    for f in &model.fits {
        cache.insert((f.start, f.end), f.clone());
    }
    let (step, _) = scan_cached(&model.fits, table, exposure, design, opts, &cache)?;
    Ok(step)
}

/// Greedy change-point detection: split while the total description length
/// strictly decreases.
pub fn detect(
    table: &CountTable,
    exposure: &ExposureCurve,
    design: &DesignMatrix,
    opts: &SearchOptions,
) -> Result<ChangePointModel> {
    opts.validate()?;
    exposure.validate_against(&table.grid)?;
    let j = table.grid.n_time;
    if j == 0 {
        return Err(Error::InvalidGrid("no time bins to segment".into()));
    }

    let mut cache: HashMap<FitKey, SegmentFit> = HashMap::new();
    let whole = fit_segment(table, exposure, design, 0..j, opts)?;
    cache.insert((0, j), whole.clone());
    let mut fits = vec![whole];
    let mut boundaries: Vec<usize> = Vec::new();
    let mut score = score_segmentation(&fits);
    let mut trace = vec![score.value];

    loop {
        let (step, computed) = scan_cached(&fits, table, exposure, design, opts, &cache)?;
        cache.extend(computed);
        let Some(step) = step else { break };
        if step.delta >= 0.0 {
            break;
        }
        let b = step.seg_index;
        fits.splice(b..=b, [step.left, step.right]);
        boundaries.insert(b, step.edge);
        score = score_segmentation(&fits);
        trace.push(score.value);
    }

    Ok(ChangePointModel {
        boundaries,
        fits,
        score,
        trace,
    })
}
