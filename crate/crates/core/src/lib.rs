//! Image-level confidence estimation for binary segmentation under the Dice
//! metric.
//!
//! - [`mask`]: probability maps, masks, thresholding, Dice.
//! - [`estimators`]: SDC and the baseline confidence scores.
//! - [`idc`]: exact ideal Dice confidence and the SDC approximation bounds.
//! - [`selective`]: risk-coverage curves and AURC.
//! - [`synth`]: synthetic data with a known posterior and the experiments on it.

pub mod error;
pub mod estimators;
pub mod idc;
pub mod mask;
pub mod numeric;
pub mod selective;
pub mod synth;

pub use error::{Error, Result};
pub use estimators::{
    amsp, ane, entropy_map, hamming_confidence, mmmc, sdc, tla, tla_fit_tau, TlaThreshold,
    UncertaintyMap,
};
pub use idc::{
    bounds, eps_global, idc_enum, idc_full_truncated, idc_pb, poisson_binomial_pmf, BoundReport,
    GlobalEps, Pmf,
};
pub use mask::{
    dice, dice_error, foreground_stats, threshold, BinaryMask, DecisionThreshold, ForegroundStats,
    ProbVector,
};
pub use selective::{
    aurc, coverage_at_risk, oracle_curve, random_baseline, rc_curve, RcCurve, RcPoint,
    ScoredPrediction,
};
pub use synth::{
    calibrate_mu_z, marginals_from_q, perturb, run_experiment, run_sweep, sample_label, sample_q,
    Estimator, ExperimentReport, LossMode, SweepAxis, SynthConfig, SynthRng, SynthSample,
};
