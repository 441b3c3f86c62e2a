//! Synthetic segmentation data with a known full posterior, and the
//! experiments built on it.
//!
//! Each image draws logits `z_i ~ N(μ_z, ρ_z²)` and sets `q_i = σ(z_i)`. Labels
//! follow the product of `Bernoulli(q_i)` truncated to exclude the all-zero
//! vector, whose marginals are `p_i = q_i / (1 - Π(1 - q_j))`.
//!
//! # Random streams
//!
//! All randomness comes from xoshiro256++ seeded through SplitMix64
//! (`seed_from_u64`). Uniforms are `(x >> 11) · 2⁻⁵³`; normals use the
//! Box–Muller transform, caching the second variate of each pair. Run `r` of an
//! experiment uses seed `seed ^ r` for logits and labels, and the same state
//! advanced by one `jump()` (2¹²⁸ steps) for perturbation noise.

use rand::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::{amsp, sdc};
use crate::idc::{idc_full_truncated, idc_pb, truncation_mass, MAX_ENUM_PIXELS};
use crate::mask::{dice_error, threshold, BinaryMask, DecisionThreshold, ProbVector};
use crate::numeric::{logit, sigmoid, ExactSum};
use crate::selective::{aurc, oracle_curve, rc_curve, RcCurve, ScoredPrediction};

/// Rejected all-zero draws tolerated before switching to exact conditional sampling.
pub const MAX_REJECTIONS: usize = 10_000;

/// Default number of Monte Carlo draws per calibration probe.
pub const CALIBRATION_DRAWS: usize = 100_000;

/// Bisection bracket for [`calibrate_mu_z`].
pub const CALIBRATION_BRACKET: (f64, f64) = (-20.0, 20.0);

/// Deterministic random stream used by every synthetic routine.
#[derive(Debug, Clone)]
pub struct SynthRng {
    inner: Xoshiro256PlusPlus,
    spare_normal: Option<f64>,
}

impl SynthRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    /// Independent stream for perturbation noise.
    pub fn jumped(&self) -> Self {
        let mut inner = self.inner.clone();
        inner.jump();
        Self {
            inner,
            spare_normal: None,
        }
    }

    /// Uniform on `[0, 1)` with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box–Muller.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform(); // (0, 1], keeps ln finite
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(radius * angle.sin());
        radius * angle.cos()
    }
}

fn positive(name: &'static str, value: f64) -> Result<()> {
    if !(value > 0.0) || !value.is_finite() {
        return Err(Error::InvalidParameter {
            name,
            reason: format!("{value} must be positive and finite"),
        });
    }
    Ok(())
}

fn non_negative(name: &'static str, value: f64) -> Result<()> {
    if !(value >= 0.0) || !value.is_finite() {
        return Err(Error::InvalidParameter {
            name,
            reason: format!("{value} must be non-negative and finite"),
        });
    }
    Ok(())
}

/// Untruncated Bernoulli parameters `q_i = σ(z_i)`, `z_i ~ N(μ_z, ρ_z²)`.
pub fn sample_q(n: usize, mu_z: f64, rho_z: f64, rng: &mut SynthRng) -> Result<ProbVector> {
    positive("rho_z", rho_z)?;
    if n == 0 {
        return Err(Error::Empty("pixel count"));
    }
    let q = (0..n)
        .map(|_| sigmoid(mu_z + rho_z * rng.normal()))
        .collect();
    Ok(ProbVector::from_vec_unchecked(q))
}

/// Marginals of the truncated product distribution.
pub fn marginals_from_q(q: &ProbVector) -> Result<ProbVector> {
    let mass = truncation_mass(q.as_slice())?;
    let p = q.as_slice().iter().map(|&v| (v / mass).min(1.0)).collect();
    Ok(ProbVector::from_vec_unchecked(p))
}

/// Draws a label from the truncated product distribution.
pub fn sample_label(q: &ProbVector, rng: &mut SynthRng) -> Result<BinaryMask> {
    sample_label_with_limit(q, rng, MAX_REJECTIONS)
}

pub(crate) fn sample_label_with_limit(
    q: &ProbVector,
    rng: &mut SynthRng,
    max_rejections: usize,
) -> Result<BinaryMask> {
    truncation_mass(q.as_slice())?;
    for _ in 0..max_rejections {
        let y: Vec<bool> = q.as_slice().iter().map(|&v| rng.uniform() < v).collect();
        if y.iter().any(|&b| b) {
            return Ok(BinaryMask::new(y).expect("non-empty"));
        }
    }
    sample_label_exact(q, rng)
}

/// Sequential sampler for the truncated distribution: until the first success,
/// pixel `i` is foreground with probability `q_i / (1 - Π_{j≥i}(1 - q_j))`.
pub(crate) fn sample_label_exact(q: &ProbVector, rng: &mut SynthRng) -> Result<BinaryMask> {
    truncation_mass(q.as_slice())?;
    let q = q.as_slice();
    // suffix_log[i] = Σ_{j≥i} ln(1 - q_j)
    let mut suffix_log = vec![0.0; q.len() + 1];
    for i in (0..q.len()).rev() {
        suffix_log[i] = suffix_log[i + 1] + (-q[i]).ln_1p();
    }
    let mut found = false;
    let y = q
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let prob = if found {
                v
            } else {
                let remaining = -suffix_log[i].exp_m1();
                if remaining > 0.0 {
                    (v / remaining).min(1.0)
                } else {
                    0.0
                }
            };
            let bit = rng.uniform() < prob;
            found |= bit;
            bit
        })
        .collect();
    Ok(BinaryMask::new(y).expect("non-empty"))
}

/// Logit-level perturbation `σ(logit(p_i) + η_i)`, `η_i ~ N(0, ρ_η²)`.
///
/// `rho_eta == 0` returns `p` unchanged without touching the stream. Otherwise
/// one normal is consumed per pixel, including pixels at 0 or 1, which stay fixed.
pub fn perturb(p: &ProbVector, rho_eta: f64, rng: &mut SynthRng) -> Result<ProbVector> {
    non_negative("rho_eta", rho_eta)?;
    if rho_eta == 0.0 {
        return Ok(p.clone());
    }
    let out = p
        .as_slice()
        .iter()
        .map(|&v| {
            let eta = rho_eta * rng.normal();
            if v == 0.0 || v == 1.0 {
                v
            } else {
                sigmoid(logit(v) + eta)
            }
        })
        .collect();
    Ok(ProbVector::from_vec_unchecked(out))
}

/// Finds `μ_z` giving the requested expected foreground ratio, by bisection
/// with [`CALIBRATION_DRAWS`] draws per probe.
pub fn calibrate_mu_z(alpha_target: f64, n: usize, rho_z: f64, seed: u64) -> Result<f64> {
    calibrate_mu_z_with_draws(alpha_target, n, rho_z, seed, CALIBRATION_DRAWS)
}

/// Every probe reuses the same standard normals, so the estimated ratio is an
/// exactly monotone function of `μ_z`. Each draw contributes the conditional
/// expectation of its label's foreground ratio, `mean_i p_i`, in place of a
/// single sampled label.
pub fn calibrate_mu_z_with_draws(
    alpha_target: f64,
    n: usize,
    rho_z: f64,
    seed: u64,
    draws: usize,
) -> Result<f64> {
    if !(alpha_target > 0.0 && alpha_target < 1.0) {
        return Err(Error::InvalidParameter {
            name: "alpha",
            reason: format!("{alpha_target} must lie strictly between 0 and 1"),
        });
    }
    positive("rho_z", rho_z)?;
    if n == 0 || draws == 0 {
        return Err(Error::Empty("calibration sample"));
    }
    let mut rng = SynthRng::new(seed);
    let normals: Vec<f64> = (0..n * draws).map(|_| rng.normal()).collect();

    let ratio = |mu_z: f64| -> f64 {
        let mut total = 0.0;
        let mut q = vec![0.0; n];
        for chunk in normals.chunks_exact(n) {
            for (qi, &z) in q.iter_mut().zip(chunk) {
                *qi = sigmoid(mu_z + rho_z * z);
            }
            // A draw whose q underflows to all zeros has no valid label; it
            // contributes its limiting ratio 1/n.
            total += match truncation_mass(&q) {
                Ok(mass) => q.iter().sum::<f64>() / mass / n as f64,
                Err(_) => 1.0 / n as f64,
            };
        }
        total / draws as f64
    };

    let (mut lo, mut hi) = CALIBRATION_BRACKET;
    let (f_lo, f_hi) = (ratio(lo), ratio(hi));
    if !(f_lo <= alpha_target && alpha_target <= f_hi) {
        return Err(Error::NotBracketed {
            target: alpha_target,
            low: f_lo,
            high: f_hi,
        });
    }
    while hi - lo >= 1e-3 {
        let mid = 0.5 * (lo + hi);
        if ratio(mid) < alpha_target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Which loss feeds the RC curves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossMode {
    /// True conditional risk `1 - IDC_full(q, ŷ)`: the expected Dice error
    /// under the known posterior.
    #[default]
    ConditionalRisk,
    /// Dice error against the drawn label `y`.
    Sampled,
}

impl LossMode {
    pub fn name(self) -> &'static str {
        match self {
            LossMode::ConditionalRisk => "conditional",
            LossMode::Sampled => "sampled",
        }
    }
}

/// Confidence scores compared by the synthetic experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Estimator {
    /// SDC on the model output `p̂`.
    Sdc,
    /// Average MSP on `p̂`.
    Amsp,
    /// Marginal-based IDC on `p̂`.
    IdcPbHat,
    /// Marginal-based IDC on the true marginals `p`.
    IdcPbTrue,
    /// Full-posterior IDC from `q`.
    IdcFull,
    /// Ranking by the loss itself.
    Oracle,
    /// Random abstention.
    Random,
}

impl Estimator {
    pub const ALL: [Estimator; 7] = [
        Estimator::Sdc,
        Estimator::Amsp,
        Estimator::IdcPbHat,
        Estimator::IdcPbTrue,
        Estimator::IdcFull,
        Estimator::Oracle,
        Estimator::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Sdc => "sdc_phat",
            Estimator::Amsp => "amsp_phat",
            Estimator::IdcPbHat => "idc_phat",
            Estimator::IdcPbTrue => "idc_p",
            Estimator::IdcFull => "idc_full",
            Estimator::Oracle => "oracle",
            Estimator::Random => "random",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.name() == name)
    }
}

/// Full description of one synthetic experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n: usize,
    pub mu_z: f64,
    pub rho_z: f64,
    pub rho_eta: f64,
    pub samples: usize,
    pub runs: usize,
    pub seed: u64,
    pub gamma: DecisionThreshold,
    pub loss: LossMode,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 10,
            mu_z: -3.698,
            rho_z: 5.0,
            rho_eta: 0.0,
            samples: 5000,
            runs: 10,
            seed: 0,
            gamma: DecisionThreshold::default(),
            loss: LossMode::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Empty("pixel count"));
        }
        if self.samples == 0 {
            return Err(Error::Empty("sample count"));
        }
        if self.runs == 0 {
            return Err(Error::Empty("run count"));
        }
        if !self.mu_z.is_finite() {
            return Err(Error::InvalidParameter {
                name: "mu_z",
                reason: format!("{} must be finite", self.mu_z),
            });
        }
        positive("rho_z", self.rho_z)?;
        non_negative("rho_eta", self.rho_eta)
    }
}

/// One synthetic image.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub q: ProbVector,
    pub p: ProbVector,
    pub p_hat: ProbVector,
    pub y: BinaryMask,
}

/// Generates the samples of one run, in order.
pub fn generate_run(config: &SynthConfig, run: usize) -> Result<Vec<SynthSample>> {
    config.validate()?;
    let mut data = SynthRng::new(config.seed ^ run as u64);
    let mut noise = data.jumped();
    (0..config.samples)
        .map(|_| {
            let q = sample_q(config.n, config.mu_z, config.rho_z, &mut data)?;
            let p = marginals_from_q(&q)?;
            let y = sample_label(&q, &mut data)?;
            let p_hat = perturb(&p, config.rho_eta, &mut noise)?;
            Ok(SynthSample { q, p, p_hat, y })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub run: usize,
    pub seed: u64,
    /// Selective risk at full coverage.
    pub mean_risk: f64,
    pub curves: Vec<(Estimator, RcCurve)>,
}

impl RunReport {
    pub fn curve(&self, estimator: Estimator) -> Option<&RcCurve> {
        self.curves
            .iter()
            .find(|(e, _)| *e == estimator)
            .map(|(_, c)| c)
    }

    pub fn aurc(&self, estimator: Estimator) -> Option<f64> {
        self.curve(estimator).map(aurc)
    }
}

/// Min, mean and max of a statistic across runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl Band {
    pub fn from_values(values: &[f64]) -> Self {
        let sum: ExactSum = values.iter().copied().collect();
        Self {
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            mean: sum.value() / values.len() as f64,
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub config: SynthConfig,
    pub estimators: Vec<Estimator>,
    pub runs: Vec<RunReport>,
}

impl ExperimentReport {
    pub fn aurcs(&self, estimator: Estimator) -> Vec<f64> {
        self.runs.iter().filter_map(|r| r.aurc(estimator)).collect()
    }

    pub fn aurc_band(&self, estimator: Estimator) -> Option<Band> {
        let values = self.aurcs(estimator);
        (!values.is_empty()).then(|| Band::from_values(&values))
    }

    pub fn risk_band(&self) -> Band {
        let risks: Vec<f64> = self.runs.iter().map(|r| r.mean_risk).collect();
        Band::from_values(&risks)
    }
}

/// Sample ids are zero-padded indices so the id tie-break follows generation order.
fn sample_id(index: usize) -> String {
    format!("{index:07}")
}

fn score_run(config: &SynthConfig, run: usize, estimators: &[Estimator]) -> Result<RunReport> {
    let samples = generate_run(config, run)?;
    let mut losses = Vec::with_capacity(samples.len());
    let mut predictions = Vec::with_capacity(samples.len());
    for s in &samples {
        let y_hat = threshold(&s.p_hat, config.gamma);
        let loss = match config.loss {
            // D(0, ·) = 0, so the truncated IDC is the untruncated one rescaled.
            LossMode::ConditionalRisk => {
                let full = idc_pb(&s.q, &y_hat)? / truncation_mass(s.q.as_slice())?;
                (1.0 - full).clamp(0.0, 1.0)
            }
            LossMode::Sampled => dice_error(&s.y, &y_hat)?,
        };
        losses.push(loss);
        predictions.push(y_hat);
    }

    let ids: Vec<String> = (0..samples.len()).map(sample_id).collect();
    let labelled: Vec<(&str, f64)> = ids
        .iter()
        .map(|id| id.as_str())
        .zip(losses.iter().copied())
        .collect();
    let mut curves = Vec::with_capacity(estimators.len());
    for &estimator in estimators {
        let curve = match estimator {
            Estimator::Oracle => oracle_curve(&labelled)?,
            Estimator::Random => {
                // Constant at the mean loss: reuse the ordering-free full-coverage value.
                let mean = oracle_curve(&labelled)?.full_coverage_risk();
                random_curve(samples.len(), mean)
            }
            _ => {
                let batch = samples
                    .iter()
                    .zip(&predictions)
                    .zip(&labelled)
                    .map(|((s, y_hat), (id, loss))| {
                        let confidence = match estimator {
                            Estimator::Sdc => sdc(&s.p_hat, y_hat)?,
                            Estimator::Amsp => amsp(&s.p_hat),
                            Estimator::IdcPbHat => idc_pb(&s.p_hat, y_hat)?,
                            Estimator::IdcPbTrue => idc_pb(&s.p, y_hat)?,
                            Estimator::IdcFull => idc_full_truncated(&s.q, y_hat)?,
                            Estimator::Oracle | Estimator::Random => unreachable!(),
                        };
                        Ok(ScoredPrediction::new(*id, confidence, *loss))
                    })
                    .collect::<Result<Vec<_>>>()?;
                rc_curve(&batch)?
            }
        };
        curves.push((estimator, curve));
    }
    let mean_risk = ExactSum::from_iter(losses.iter().copied()).value() / losses.len() as f64;
    Ok(RunReport {
        run,
        seed: config.seed ^ run as u64,
        mean_risk,
        curves,
    })
}

fn random_curve(n: usize, mean: f64) -> RcCurve {
    let batch: Vec<ScoredPrediction> = (0..n)
        .map(|i| ScoredPrediction::new(sample_id(i), 0.0, mean))
        .collect();
    rc_curve(&batch).expect("valid constant batch")
}

/// Runs every repetition of an experiment. Runs execute in parallel on the
/// current rayon pool; the report is identical for any pool size.
pub fn run_experiment(config: &SynthConfig, estimators: &[Estimator]) -> Result<ExperimentReport> {
    config.validate()?;
    if estimators.contains(&Estimator::IdcFull) && config.n > MAX_ENUM_PIXELS {
        return Err(Error::EnumerationLimit {
            n: config.n,
            max: MAX_ENUM_PIXELS,
        });
    }
    let mut estimators = estimators.to_vec();
    estimators.sort_unstable();
    estimators.dedup();
    let runs = (0..config.runs)
        .into_par_iter()
        .map(|run| score_run(config, run, &estimators))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport {
        config: config.clone(),
        estimators,
        runs,
    })
}

/// Parameter varied by a sweep.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    /// Logit mean values used directly.
    MuZ(Vec<f64>),
    /// Target foreground ratios, each calibrated to a logit mean with the config seed.
    Alpha(Vec<f64>),
    /// Perturbation strengths.
    RhoEta(Vec<f64>),
}

impl SweepAxis {
    /// Prevalence grid `{0.01, 0.025, 0.05, 0.1, 0.175, 0.25, 0.35, 0.5}`, keeping
    /// only ratios above `1/n`; lower ones are unreachable because every label has
    /// at least one foreground pixel.
    pub fn default_alpha(n: usize) -> Self {
        let floor = 1.0 / n as f64;
        SweepAxis::Alpha(
            [0.01, 0.025, 0.05, 0.1, 0.175, 0.25, 0.35, 0.5]
                .into_iter()
                .filter(|&a| a > floor)
                .collect(),
        )
    }

    /// Default perturbation grid `0, 0.25, …, 3.0`.
    pub fn default_rho_eta() -> Self {
        SweepAxis::RhoEta((0..=12).map(|i| i as f64 * 0.25).collect())
    }

    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::MuZ(_) => "mu_z",
            SweepAxis::Alpha(_) => "alpha",
            SweepAxis::RhoEta(_) => "rho_eta",
        }
    }

    pub fn values(&self) -> &[f64] {
        match self {
            SweepAxis::MuZ(v) | SweepAxis::Alpha(v) | SweepAxis::RhoEta(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub report: ExperimentReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub axis: &'static str,
    pub points: Vec<SweepPoint>,
}

/// Repeats [`run_experiment`] at every value of the sweep axis.
pub fn run_sweep(
    config: &SynthConfig,
    axis: &SweepAxis,
    estimators: &[Estimator],
) -> Result<SweepReport> {
    if axis.values().is_empty() {
        return Err(Error::Empty("sweep grid"));
    }
    let points = axis
        .values()
        .iter()
        .map(|&value| {
            let mut cfg = config.clone();
            match axis {
                SweepAxis::MuZ(_) => cfg.mu_z = value,
                SweepAxis::Alpha(_) => {
                    cfg.mu_z = calibrate_mu_z(value, cfg.n, cfg.rho_z, cfg.seed)?
                }
                SweepAxis::RhoEta(_) => cfg.rho_eta = value,
            }
            Ok(SweepPoint {
                value,
                report: run_experiment(&cfg, estimators)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport {
        axis: axis.name(),
        points,
    })
}
