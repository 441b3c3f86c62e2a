//! Probability maps, binary masks, thresholding and the Dice coefficient.
//!
//! All sums go through [`pairwise_sum`], since real volumes reach 10^7 voxels.

use crate::error::{Error, Result};
use crate::numeric::pairwise_sum;

/// Per-pixel foreground probabilities, flattened. Never empty; every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("probability vector"));
        }
        if let Some((index, &value)) = values
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
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        debug_assert!(!values.is_empty());
        debug_assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
        Self(values)
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

/// Hard segmentation (or ground truth) over `{0, 1}`. Never empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask(Vec<bool>);

impl BinaryMask {
    pub fn new(values: Vec<bool>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("binary mask"));
        }
        Ok(Self(values))
    }

    /// Builds a mask from reals that must be exactly 0 or 1.
    pub fn from_reals(values: &[f64]) -> Result<Self> {
        let bits = values
            .iter()
            .enumerate()
            .map(|(index, &v)| {
                if v == 0.0 {
                    Ok(false)
                } else if v == 1.0 {
                    Ok(true)
                } else {
                    Err(Error::OutOfRange {
                        index,
                        value: v,
                        expected: "{0, 1}",
                    })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(bits)
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of foreground pixels.
    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn is_all_zero(&self) -> bool {
        !self.0.iter().any(|&b| b)
    }

    pub fn to_reals(&self) -> Vec<f64> {
        self.0.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

/// Decision threshold `γ ∈ [0, 1]` applied to probabilities.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct DecisionThreshold(f64);

impl DecisionThreshold {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::InvalidParameter {
                name: "gamma",
                reason: format!("{gamma} is outside [0, 1]"),
            });
        }
        Ok(Self(gamma))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for DecisionThreshold {
    fn default() -> Self {
        Self(0.5)
    }
}

pub(crate) fn check_lengths(left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(Error::LengthMismatch { left, right });
    }
    Ok(())
}

/// Foreground wherever `p_i >= gamma` (boundary pixels are foreground).
pub fn threshold(p: &ProbVector, gamma: DecisionThreshold) -> BinaryMask {
    BinaryMask(p.0.iter().map(|&v| v >= gamma.0).collect())
}

/// Dice coefficient with the convention `D(0, 0) = 0`.
pub fn dice(y: &BinaryMask, y_hat: &BinaryMask) -> Result<f64> {
    check_lengths(y.len(), y_hat.len())?;
    let (mut inter, mut total) = (0usize, 0usize);
    for (&a, &b) in y.0.iter().zip(&y_hat.0) {
        inter += usize::from(a && b);
        total += usize::from(a) + usize::from(b);
    }
    if total == 0 {
        return Ok(0.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// `1 - dice(y, y_hat)`.
pub fn dice_error(y: &BinaryMask, y_hat: &BinaryMask) -> Result<f64> {
    Ok(1.0 - dice(y, y_hat)?)
}

/// Summary of a probability map split by a hard prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForegroundStats {
    /// Predicted foreground size.
    pub k: usize,
    /// Mean probability over the predicted foreground, 0 when `k == 0`.
    pub mu: f64,
    /// Total probability over the predicted background.
    pub lambda: f64,
    /// Total probability over the predicted foreground.
    pub s: f64,
}

pub fn foreground_stats(p: &ProbVector, y_hat: &BinaryMask) -> Result<ForegroundStats> {
    check_lengths(p.len(), y_hat.len())?;
    let k = y_hat.count();
    let pairs = || p.0.iter().zip(&y_hat.0);
    let s = pairwise_sum(pairs().filter(|(_, &b)| b).map(|(&v, _)| v));
    let lambda = pairwise_sum(pairs().filter(|(_, &b)| !b).map(|(&v, _)| v));
    let mu = if k == 0 { 0.0 } else { s / k as f64 };
    Ok(ForegroundStats { k, mu, lambda, s })
}
