//! Detection of abrupt spectral changes in photon-counting time series.
//!
//! An observation is a table of photon counts over a wavelength-time grid.
//! Within a time segment the spectrum is modeled as a log-linear combination
//! of a smooth cubic radial basis and per-bin emission-line indicators, fit
//! by an L1-penalized Poisson regression. Two description-length criteria
//! tune the per-segment fits and score candidate segmentations; a greedy
//! stepwise search places change points, and a Monte Carlo permutation test
//! attaches a significance level to the chosen segmentation.

pub mod basis;
pub mod data;
pub mod error;
pub mod io;
pub mod lasso;
pub mod mdl;
pub mod permtest;
pub mod rng;
pub mod search;
pub mod segment;
pub mod sim;

pub use basis::{BasisConfig, DesignMatrix, StandardizedDesign};
pub use data::{
    AreaTable, BinGrid, BinOutcome, CountTable, EventList, ExposureCurve, PhotonEvent,
    bin_events, build_exposure,
};
pub use error::{Error, Result};
pub use lasso::{Coefficients, CollapsedData, FitOptions, PenaltyConfig, fit_penalized,
    penalty_path, pois_logpmf};
pub use mdl::{MdlFullScore, MdlNullScore, log_binomial, mdl_full, mdl_null};
pub use permtest::{PermTestResult, permutation_test, permute_columns};
pub use search::{CandidateStep, ChangePointModel, candidate_scan, detect, score_segmentation};
pub use segment::{SearchOptions, SegmentFit, fit_segment, predict_spectrum};
pub use sim::{
    EffectSize, RecoveryReport, ReplicateOutcome, SegmentSpectrum, TestFunction,
    concat_test_functions, make_preset, preset_names, run_recovery_experiment, sample_poisson,
    simulate_counts, simulate_counts_rng,
};
