//! Risk-coverage analytics for image-level selective prediction.
//!
//! Curves live on the discrete grid `i/N`. Prefix risks and AURC use exactly
//! rounded sums, so they do not depend on summation order, and a pointwise
//! smaller set of exact risks always yields a smaller or equal rounded value.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::numeric::ExactSum;

/// One scored prediction: identifier, confidence, and Dice-error loss.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPrediction {
    pub id: String,
    pub confidence: f64,
    pub loss: f64,
}

impl ScoredPrediction {
    pub fn new(id: impl Into<String>, confidence: f64, loss: f64) -> Self {
        Self {
            id: id.into(),
            confidence,
            loss,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RcPoint {
    pub coverage: f64,
    pub risk: f64,
}

/// Selective risk at every accepted-set size `1..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct RcCurve {
    points: Vec<RcPoint>,
}

impl RcCurve {
    pub fn points(&self) -> &[RcPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Risk at full coverage, i.e. the batch mean loss.
    pub fn full_coverage_risk(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.risk)
    }

    fn from_ordered_losses(losses: impl ExactSizeIterator<Item = f64>) -> Self {
        let n = losses.len() as f64;
        let mut sum = ExactSum::new();
        let points = losses
            .enumerate()
            .map(|(i, loss)| {
                sum.add(loss);
                let accepted = (i + 1) as f64;
                RcPoint {
                    coverage: accepted / n,
                    risk: sum.value() / accepted,
                }
            })
            .collect();
        Self { points }
    }
}

fn validate<'a>(items: impl Iterator<Item = (&'a str, f64)>) -> Result<()> {
    let mut seen = HashSet::new();
    let mut any = false;
    for (index, (id, loss)) in items.enumerate() {
        any = true;
        if !(0.0..=1.0).contains(&loss) {
            return Err(Error::OutOfRange {
                index,
                value: loss,
                expected: "[0, 1]",
            });
        }
        if !seen.insert(id) {
            return Err(Error::DuplicateId(id.to_owned()));
        }
    }
    if !any {
        return Err(Error::Empty("prediction batch"));
    }
    Ok(())
}

/// RC curve obtained by accepting predictions in order of decreasing
/// confidence, ties broken by ascending id.
pub fn rc_curve(batch: &[ScoredPrediction]) -> Result<RcCurve> {
    validate(batch.iter().map(|s| (s.id.as_str(), s.loss)))?;
    if let Some((index, s)) = batch
        .iter()
        .enumerate()
        .find(|(_, s)| s.confidence.is_nan())
    {
        return Err(Error::OutOfRange {
            index,
            value: s.confidence,
            expected: "non-NaN confidences",
        });
    }
    let mut order: Vec<&ScoredPrediction> = batch.iter().collect();
    order.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then_with(|| a.id.cmp(&b.id))
    });
    Ok(RcCurve::from_ordered_losses(
        order.into_iter().map(|s| s.loss),
    ))
}

/// Area under the RC curve: the mean of the per-prefix selective risks.
pub fn aurc(curve: &RcCurve) -> f64 {
    if curve.is_empty() {
        return 0.0;
    }
    let sum: ExactSum = curve.points.iter().map(|p| p.risk).collect();
    sum.value() / curve.len() as f64
}

/// Best achievable RC curve: predictions accepted in order of increasing loss.
pub fn oracle_curve<S: AsRef<str>>(losses: &[(S, f64)]) -> Result<RcCurve> {
    validate(losses.iter().map(|(id, l)| (id.as_ref(), *l)))?;
    let mut order: Vec<(&str, f64)> = losses.iter().map(|(id, l)| (id.as_ref(), *l)).collect();
    order.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    Ok(RcCurve::from_ordered_losses(
        order.into_iter().map(|(_, l)| l),
    ))
}

/// Expected selective risk of random abstention, equal at every coverage to
/// the batch mean loss.
pub fn random_baseline<S: AsRef<str>>(losses: &[(S, f64)]) -> Result<f64> {
    validate(losses.iter().map(|(id, l)| (id.as_ref(), *l)))?;
    let sum: ExactSum = losses.iter().map(|(_, l)| *l).collect();
    Ok(sum.value() / losses.len() as f64)
}

/// Largest coverage whose selective risk does not exceed `target_risk`, or 0
/// if no point qualifies.
pub fn coverage_at_risk(curve: &RcCurve, target_risk: f64) -> f64 {
    curve
        .points
        .iter()
        .filter(|p| p.risk <= target_risk)
        .map(|p| p.coverage)
        .fold(0.0, f64::max)
}
