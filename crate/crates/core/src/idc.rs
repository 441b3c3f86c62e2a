//! Ideal Dice confidence (IDC) and the bounds relating it to the SDC.
//!
//! Two exact routes compute the marginal-based IDC: brute-force enumeration of
//! all `2^n` label vectors ([`idc_enum`]) and a double expectation over two
//! Poisson-binomial distributions ([`idc_pb`]). They share no code beyond the
//! input types.

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::estimators::sdc;
use crate::mask::{check_lengths, foreground_stats, BinaryMask, ForegroundStats, ProbVector};

/// Largest pixel count accepted by the enumeration routes (~4M terms).
pub const MAX_ENUM_PIXELS: usize = 22;

/// Default pixel cap for [`idc_pb`].
pub const DEFAULT_PB_CAP: usize = 20_000;

/// Absolute truncation tolerance of the Poisson series in [`b_upper`].
pub const POISSON_TAIL_TOL: f64 = 1e-12;

/// Probability mass function over `0..=m` successes.
#[derive(Debug, Clone, PartialEq)]
pub struct Pmf(Vec<f64>);

impl Pmf {
    pub fn probabilities(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, successes: usize) -> f64 {
        self.0.get(successes).copied().unwrap_or(0.0)
    }

    pub fn mean(&self) -> f64 {
        self.0.iter().enumerate().map(|(i, &w)| i as f64 * w).sum()
    }
}

/// Distribution of a sum of independent Bernoulli variables, by iterative convolution.
pub fn poisson_binomial_pmf(probs: &[f64]) -> Result<Pmf> {
    if let Some((index, &value)) = probs
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        return Err(Error::OutOfRange {
            index,
            value,
            expected: "[0, 1]",
        });
    }
    let mut pmf = Vec::with_capacity(probs.len() + 1);
    pmf.push(1.0);
    for &p in probs {
        pmf.push(0.0);
        for j in (1..pmf.len()).rev() {
            pmf[j] = pmf[j] * (1.0 - p) + pmf[j - 1] * p;
        }
        pmf[0] *= 1.0 - p;
    }
    Ok(Pmf(pmf))
}

fn enum_guard(n: usize) -> Result<()> {
    if n > MAX_ENUM_PIXELS {
        return Err(Error::EnumerationLimit {
            n,
            max: MAX_ENUM_PIXELS,
        });
    }
    Ok(())
}

fn mask_bits(y_hat: &BinaryMask) -> u32 {
    y_hat
        .as_slice()
        .iter()
        .enumerate()
        .fold(0, |acc, (i, &b)| acc | (u32::from(b) << i))
}

/// Expected Dice of `y_hat` under the product distribution with parameters
/// `probs`, summed over every label vector. `D(0, ·) = 0`, so `y = 0` never
/// contributes.
fn enumerate_expected_dice(probs: &[f64], y_hat: &BinaryMask) -> f64 {
    let n = probs.len();
    let pred = mask_bits(y_hat);
    let k = pred.count_ones();
    let mut total = 0.0;
    for y in 1u32..(1u32 << n) {
        let weight: f64 = probs
            .iter()
            .enumerate()
            .map(|(i, &p)| if y >> i & 1 == 1 { p } else { 1.0 - p })
            .product();
        if weight == 0.0 {
            continue;
        }
        let inter = (y & pred).count_ones();
        let dice = 2.0 * f64::from(inter) / f64::from(y.count_ones() + k);
        total += weight * dice;
    }
    total
}

/// Marginal-based IDC by brute-force enumeration. Limited to
/// [`MAX_ENUM_PIXELS`] pixels.
pub fn idc_enum(p: &ProbVector, y_hat: &BinaryMask) -> Result<f64> {
    check_lengths(p.len(), y_hat.len())?;
    enum_guard(p.len())?;
    Ok(enumerate_expected_dice(p.as_slice(), y_hat))
}

/// Marginal-based IDC through the Poisson-binomial expectation, capped at
/// [`DEFAULT_PB_CAP`] pixels.
pub fn idc_pb(p: &ProbVector, y_hat: &BinaryMask) -> Result<f64> {
    idc_pb_with_cap(p, y_hat, DEFAULT_PB_CAP)
}

/// [`idc_pb`] with a caller-chosen pixel cap. Cost is `O(n²)`.
pub fn idc_pb_with_cap(p: &ProbVector, y_hat: &BinaryMask, cap: usize) -> Result<f64> {
    check_lengths(p.len(), y_hat.len())?;
    if p.len() > cap {
        return Err(Error::SizeCap { n: p.len(), cap });
    }
    let (fg, bg): (Vec<_>, Vec<_>) = p
        .as_slice()
        .iter()
        .zip(y_hat.as_slice())
        .partition(|(_, &b)| b);
    let k = fg.len();
    if k == 0 {
        return Ok(0.0);
    }
    let fg: Vec<f64> = fg.into_iter().map(|(&v, _)| v).collect();
    let bg: Vec<f64> = bg.into_iter().map(|(&v, _)| v).collect();
    let true_pos = poisson_binomial_pmf(&fg)?;
    let false_neg = poisson_binomial_pmf(&bg)?;

    let mut total = 0.0;
    for (a, &wa) in true_pos.0.iter().enumerate().skip(1) {
        if wa == 0.0 {
            continue;
        }
        let base = (k + a) as f64;
        let inner: f64 = false_neg
            .0
            .iter()
            .enumerate()
            .map(|(b, &wb)| wb / (base + b as f64))
            .sum();
        total += wa * 2.0 * a as f64 * inner;
    }
    Ok(total)
}

/// Full-posterior IDC under the product distribution with parameters `q`
/// truncated to exclude the all-zero label. Enumerates, so limited to
/// [`MAX_ENUM_PIXELS`] pixels.
pub fn idc_full_truncated(q: &ProbVector, y_hat: &BinaryMask) -> Result<f64> {
    check_lengths(q.len(), y_hat.len())?;
    enum_guard(q.len())?;
    let normalizer = truncation_mass(q.as_slice())?;
    Ok(enumerate_expected_dice(q.as_slice(), y_hat) / normalizer)
}

/// `1 - Π(1 - q_j)`, the probability of a nonzero label; errors when it is 0.
pub(crate) fn truncation_mass(q: &[f64]) -> Result<f64> {
    let log_empty: f64 = q.iter().map(|&v| (-v).ln_1p()).sum();
    let mass = -log_empty.exp_m1();
    if mass <= 0.0 {
        return Err(Error::DegenerateTruncation);
    }
    Ok(mass)
}

/// Lower and upper bounds on `IDC / SDC` for one prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    pub k: usize,
    pub mu: f64,
    pub lambda: f64,
    pub s: f64,
    pub b_lower: f64,
    pub b_upper: f64,
    /// Bound on the relative error `|SDC - IDC| / IDC`.
    pub eps: f64,
}

impl BoundReport {
    pub fn from_stats(stats: ForegroundStats) -> Result<Self> {
        if !(stats.s > 0.0) {
            return Err(Error::ZeroForeground);
        }
        let b_lower = b_lower(stats.k, stats.s, stats.lambda);
        let b_upper = b_upper(stats.k, stats.s, stats.lambda);
        Ok(Self {
            k: stats.k,
            mu: stats.mu,
            lambda: stats.lambda,
            s: stats.s,
            b_lower,
            b_upper,
            eps: relative_error_bound(b_lower, b_upper),
        })
    }
}

/// `max(1/b_L - 1, 1 - 1/b_U)`.
pub fn relative_error_bound(b_lower: f64, b_upper: f64) -> f64 {
    (1.0 / b_lower - 1.0).max(1.0 - 1.0 / b_upper)
}

/// Lower bound `(k + kμ + λ) / (k + 1 + (k-1)μ + λ)`, written in terms of `s = kμ`.
pub fn b_lower(k: usize, s: f64, lambda: f64) -> f64 {
    let k = k as f64;
    let mu = s / k;
    (k + s + lambda) / (k + 1.0 + (s - mu) + lambda)
}

/// Upper bound `E[(k + kμ + λ) / (k + kμ + i)]` with `i ~ Poisson(λ)`, with
/// `s = kμ`.
///
/// The series is summed outward from the mode and stops in each direction once
/// a geometric bound on the remaining tail mass, times the largest factor
/// `(k + kμ + λ) / (k + kμ)`, drops below [`POISSON_TAIL_TOL`].
pub fn b_upper(k: usize, s: f64, lambda: f64) -> f64 {
    let base = k as f64 + s;
    let numer = base + lambda;
    if lambda == 0.0 {
        return numer / base;
    }
    let factor = |i: f64| numer / (base + i);
    let max_factor = factor(0.0);

    let mode = lambda.floor();
    let mode_mass = poisson_mass_at(mode, lambda);
    let mut total = mode_mass * factor(mode);

    // Upward: the ratio of consecutive terms is λ/(i+1) < 1 past the mode.
    let mut term = mode_mass;
    let mut i = mode;
    loop {
        term *= lambda / (i + 1.0);
        i += 1.0;
        total += term * factor(i);
        let r = lambda / (i + 1.0);
        if term == 0.0 || term * r / (1.0 - r) * max_factor < POISSON_TAIL_TOL {
            break;
        }
    }

    // Downward: ratio i/λ < 1 below the mode.
    let mut term = mode_mass;
    let mut i = mode;
    while i > 0.0 {
        term *= i / lambda;
        i -= 1.0;
        total += term * factor(i);
        let r = i / lambda;
        if term == 0.0 || term * r / (1.0 - r) * max_factor < POISSON_TAIL_TOL {
            break;
        }
    }
    total
}

fn poisson_mass_at(i: f64, lambda: f64) -> f64 {
    if lambda < 500.0 {
        let mut mass = (-lambda).exp();
        for j in 1..=(i as u64) {
            mass *= lambda / j as f64;
        }
        mass
    } else {
        (i * lambda.ln() - lambda - ln_gamma(i + 1.0)).exp()
    }
}

/// Bounds on `IDC / SDC` for a prediction with nonzero foreground mass.
pub fn bounds(p: &ProbVector, y_hat: &BinaryMask) -> Result<BoundReport> {
    BoundReport::from_stats(foreground_stats(p, y_hat)?)
}

/// Worst-case relative error of the SDC given only the foreground mass `s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalEps {
    /// `(3 - 2√2) / s`, the lower-bound side.
    pub eps1: f64,
    /// Numerical maximum of `1 - 1/b_U` subject to `kμ = s`.
    pub eps2: f64,
    pub eps: f64,
    /// Maximiser `(k, μ, λ)` found for `eps2`.
    pub argmax: (usize, f64, f64),
}

const EPS2_MAX_K: f64 = 1e6;
const EPS2_LAMBDA_RANGE: (f64, f64) = (1e-3, 1e3);
const EPS2_K_POINTS: usize = 120;
const EPS2_LAMBDA_POINTS: usize = 61;

pub fn eps_global(s: f64) -> Result<GlobalEps> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::InvalidParameter {
            name: "s",
            reason: format!("{s} must be positive and finite"),
        });
    }
    let eps1 = (3.0 - 2.0 * std::f64::consts::SQRT_2) / s;
    let (eps2, argmax) = eps2_search(s);
    Ok(GlobalEps {
        eps1,
        eps2,
        eps: eps1.max(eps2),
        argmax,
    })
}

fn upper_gap(k: usize, s: f64, lambda: f64) -> f64 {
    1.0 - 1.0 / b_upper(k, s, lambda)
}

fn log_grid(lo: f64, hi: f64, points: usize) -> impl Iterator<Item = f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..points).map(move |j| (a + (b - a) * j as f64 / (points - 1) as f64).exp())
}

/// Grid over `k` (log-spaced integers from `⌈s⌉`) and `λ` (log grid), then
/// golden-section refinement of `λ` around the best grid cell.
fn eps2_search(s: f64) -> (f64, (usize, f64, f64)) {
    let k_min = s.ceil().max(1.0);
    let mut ks: Vec<usize> = log_grid(k_min, EPS2_MAX_K.max(k_min), EPS2_K_POINTS)
        .map(|k| k.round() as usize)
        .collect();
    ks.extend((0..10).map(|d| k_min as usize + d));
    ks.sort_unstable();
    ks.dedup();

    let lambdas: Vec<f64> =
        log_grid(EPS2_LAMBDA_RANGE.0, EPS2_LAMBDA_RANGE.1, EPS2_LAMBDA_POINTS).collect();
    let mut best = (f64::NEG_INFINITY, (0, 0.0, 0.0));
    for &k in &ks {
        let gaps: Vec<f64> = lambdas.iter().map(|&l| upper_gap(k, s, l)).collect();
        let (j, _) = gaps
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty grid");
        let lo = lambdas[j.saturating_sub(1)];
        let hi = lambdas[(j + 1).min(lambdas.len() - 1)];
        let (lambda, gap) = golden_max(|l| upper_gap(k, s, l), lo, hi, 1e-9);
        let (lambda, gap) = if gap >= gaps[j] {
            (lambda, gap)
        } else {
            (lambdas[j], gaps[j])
        };
        if gap > best.0 {
            best = (gap, (k, s / k as f64, lambda));
        }
    }
    best
}

fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol * (1.0 + lo.abs()) {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        }
    }
    if f1 >= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Ratio `IDC / SDC` via the Poisson-binomial route; `None` when `s = 0`.
pub fn idc_sdc_ratio(p: &ProbVector, y_hat: &BinaryMask) -> Result<Option<f64>> {
    let soft = sdc(p, y_hat)?;
    if soft == 0.0 {
        return Ok(None);
    }
    Ok(Some(idc_pb(p, y_hat)? / soft))
}
