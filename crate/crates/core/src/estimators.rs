//! Image-level confidence scores computed from a probability map.
//!
//! Entropies are in bits and use `0 · log 0 = 0` exactly. The 0/0 cases of
//! MMMC and TLA both resolve to 0, i.e. maximal confidence.

use crate::error::{Error, Result};
use crate::mask::{check_lengths, threshold, BinaryMask, DecisionThreshold, ProbVector};
use crate::numeric::pairwise_sum;

/// Per-pixel binary entropy in bits, each value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMap(Vec<f64>);

impl UncertaintyMap {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Entropy threshold for TLA, in bits.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct TlaThreshold {
    tau: f64,
    alpha: f64,
}

impl TlaThreshold {
    pub fn new(tau: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::InvalidParameter {
                name: "tau",
                reason: format!("{tau} is outside [0, 1]"),
            });
        }
        Ok(Self {
            tau,
            alpha: f64::NAN,
        })
    }

    pub fn tau(self) -> f64 {
        self.tau
    }

    /// Mean predicted foreground ratio of the tuning set; NaN when `tau` was given directly.
    pub fn alpha(self) -> f64 {
        self.alpha
    }
}

pub fn binary_entropy(p: f64) -> f64 {
    let xlog = |x: f64| if x == 0.0 { 0.0 } else { x * x.log2() };
    -(xlog(1.0 - p) + xlog(p))
}

pub fn entropy_map(p: &ProbVector) -> UncertaintyMap {
    UncertaintyMap(p.as_slice().iter().map(|&v| binary_entropy(v)).collect())
}

/// Soft Dice Confidence: the Dice formula with probabilities in place of the
/// ground truth. Zero whenever `Σ p_j ŷ_j = 0`.
pub fn sdc(p: &ProbVector, y_hat: &BinaryMask) -> Result<f64> {
    check_lengths(p.len(), y_hat.len())?;
    let pairs = || p.as_slice().iter().zip(y_hat.as_slice());
    let overlap = pairwise_sum(pairs().filter(|(_, &b)| b).map(|(&v, _)| v));
    if overlap == 0.0 {
        return Ok(0.0);
    }
    let denom = pairwise_sum(p.as_slice().iter().copied()) + y_hat.count() as f64;
    Ok(2.0 * overlap / denom)
}

/// Average maximum softmax probability.
pub fn amsp(p: &ProbVector) -> f64 {
    let sum = pairwise_sum(p.as_slice().iter().map(|&v| v.max(1.0 - v)));
    sum / p.len() as f64
}

/// Average negative entropy.
pub fn ane(p: &ProbVector) -> f64 {
    let sum = pairwise_sum(p.as_slice().iter().map(|&v| binary_entropy(v)));
    -sum / p.len() as f64
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Median-Min-Max confidence over the entropy map. Even-length maps use the
/// mean of the two central values as the median.
pub fn mmmc(p: &ProbVector) -> f64 {
    let mut u = entropy_map(p).0;
    u.sort_unstable_by(f64::total_cmp);
    let max = u[u.len() - 1];
    if max == 0.0 {
        return 0.0;
    }
    -(median(&u) + u[0]) / max
}

/// Fits the TLA threshold on unlabeled tuning maps.
///
/// `alpha` is the mean predicted foreground ratio, and `tau` is the nearest-rank
/// `(1 - alpha)` quantile of all tuning-pixel entropies pooled together.
pub fn tla_fit_tau(tuning: &[ProbVector], gamma: DecisionThreshold) -> Result<TlaThreshold> {
    if tuning.is_empty() {
        return Err(Error::Empty("TLA tuning set"));
    }
    let ratios = tuning
        .iter()
        .map(|p| threshold(p, gamma).count() as f64 / p.len() as f64);
    let alpha = pairwise_sum(ratios) / tuning.len() as f64;

    let mut pooled: Vec<f64> = tuning
        .iter()
        .flat_map(|p| p.as_slice().iter().map(|&v| binary_entropy(v)))
        .collect();
    pooled.sort_unstable_by(f64::total_cmp);
    let m = pooled.len();
    let rank = ((1.0 - alpha) * m as f64).ceil() as usize;
    let tau = pooled[rank.clamp(1, m) - 1];
    Ok(TlaThreshold { tau, alpha })
}

/// Threshold-level aggregation: negative mean entropy over pixels with entropy
/// strictly above `tau`. Returns 0 when no pixel qualifies.
pub fn tla(p: &ProbVector, tau: f64) -> f64 {
    let selected: Vec<f64> = p
        .as_slice()
        .iter()
        .map(|&v| binary_entropy(v))
        .filter(|&u| u > tau)
        .collect();
    if selected.is_empty() {
        return 0.0;
    }
    -pairwise_sum(selected.iter().copied()) / selected.len() as f64
}

/// Mean probability of the predicted class; optimal under the Hamming loss.
pub fn hamming_confidence(p: &ProbVector, y_hat: &BinaryMask) -> Result<f64> {
    check_lengths(p.len(), y_hat.len())?;
    let terms = p
        .as_slice()
        .iter()
        .zip(y_hat.as_slice())
        .map(|(&v, &b)| if b { v } else { 1.0 - v });
    Ok(pairwise_sum(terms) / p.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    fn bm(v: &[u8]) -> BinaryMask {
        BinaryMask::new(v.iter().map(|&b| b == 1).collect()).unwrap()
    }

    fn half() -> DecisionThreshold {
        DecisionThreshold::new(0.5).unwrap()
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy_map(&pv(&[0.5])).as_slice(), &[1.0]);
        assert_eq!(entropy_map(&pv(&[1.0, 0.0])).as_slice(), &[0.0, 0.0]);
        // 40-digit reference: 0.8112781244591328639...
        let u = entropy_map(&pv(&[0.25])).into_inner()[0];
        assert!((u - 0.811_278_124_459_132_9).abs() < 1e-15);
    }

    #[test]
    fn sdc_examples() {
        assert_eq!(sdc(&pv(&[0.0, 0.0]), &bm(&[0, 0])).unwrap(), 0.0);
        assert_eq!(sdc(&pv(&[1.0, 0.0, 1.0]), &bm(&[1, 0, 1])).unwrap(), 1.0);
        let v = sdc(&pv(&[0.8, 0.6, 0.1]), &bm(&[1, 1, 0])).unwrap();
        assert!((v - 0.8).abs() < 1e-15);
        assert_eq!(sdc(&pv(&[0.0, 0.7]), &bm(&[1, 0])).unwrap(), 0.0);
        assert!(sdc(&pv(&[0.1]), &bm(&[1, 0])).is_err());
    }

    #[test]
    fn amsp_ane_examples() {
        assert_eq!(amsp(&pv(&[0.5, 0.5])), 0.5);
        assert_eq!(amsp(&pv(&[1.0, 0.0])), 1.0);
        assert!((amsp(&pv(&[0.9, 0.2])) - 0.85).abs() < 1e-15);
        assert_eq!(ane(&pv(&[0.5])), -1.0);
        assert_eq!(ane(&pv(&[1.0, 0.0])), 0.0);
        assert_eq!(ane(&pv(&[0.5, 1.0])), -0.5);
    }

    #[test]
    fn mmmc_examples() {
        assert_eq!(mmmc(&pv(&[0.5, 0.5, 1.0])), -1.0);
        assert_eq!(mmmc(&pv(&[1.0, 1.0])), 0.0);
        assert_eq!(mmmc(&pv(&[0.5, 1.0, 1.0])), 0.0);
        // Even length: u = [0, 1], median 0.5.
        assert_eq!(mmmc(&pv(&[1.0, 0.5])), -0.5);
    }

    /// Independent quantile oracle: smallest pooled value v such that at least
    /// `(1 - alpha)` of the pooled values are <= v.
    fn nearest_rank_oracle(values: &[f64], q: f64) -> f64 {
        let m = values.len() as f64;
        let mut best = f64::INFINITY;
        for &v in values {
            let at_or_below = values.iter().filter(|&&w| w <= v).count() as f64;
            if at_or_below >= q * m && v < best {
                best = v;
            }
        }
        if q == 0.0 {
            values.iter().copied().fold(f64::INFINITY, f64::min)
        } else {
            best
        }
    }

    #[test]
    fn tla_fit_tau_examples() {
        let p = pv(&[0.9, 0.2, 0.3, 0.4]);
        let fit = tla_fit_tau(std::slice::from_ref(&p), half()).unwrap();
        assert_eq!(fit.alpha(), 0.25);
        // 40-digit reference for H(0.3): 0.8812908992306926182...
        assert!((fit.tau() - 0.881_290_899_230_692_6).abs() < 1e-12);
        let pooled = entropy_map(&p).into_inner();
        assert_eq!(fit.tau(), nearest_rank_oracle(&pooled, 0.75));

        let fit = tla_fit_tau(&[pv(&[1.0, 1.0])], half()).unwrap();
        assert_eq!((fit.alpha(), fit.tau()), (1.0, 0.0));

        let twice = tla_fit_tau(&[p.clone(), p.clone()], half()).unwrap();
        assert_eq!(twice.tau(), tla_fit_tau(&[p], half()).unwrap().tau());

        assert!(matches!(tla_fit_tau(&[], half()), Err(Error::Empty(_))));
    }

    #[test]
    fn tla_examples() {
        assert_eq!(tla(&pv(&[0.5, 1.0]), 0.5), -1.0);
        assert_eq!(tla(&pv(&[1.0, 1.0]), 0.5), 0.0);
        assert_eq!(tla(&pv(&[0.5, 0.5]), 0.0), -1.0);
        assert!(TlaThreshold::new(1.5).is_err());
    }

    #[test]
    fn hamming_examples() {
        assert!((hamming_confidence(&pv(&[0.8, 0.3]), &bm(&[1, 0])).unwrap() - 0.75).abs() < 1e-15);
        assert_eq!(
            hamming_confidence(&pv(&[1.0, 0.0]), &bm(&[1, 0])).unwrap(),
            1.0
        );
        assert!(hamming_confidence(&pv(&[1.0]), &bm(&[1, 0])).is_err());
    }

    fn probs(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(
            prop_oneof![4 => 0.0..=1.0f64, 1 => Just(0.0), 1 => Just(1.0)],
            1..=max_len,
        )
    }

    proptest! {
        #[test]
        fn tla_fit_tau_matches_quantile_oracle(maps in prop::collection::vec(probs(12), 1..5), g in 0.0..=1.0f64) {
            let maps: Vec<ProbVector> = maps.into_iter().map(|v| ProbVector::new(v).unwrap()).collect();
            let fit = tla_fit_tau(&maps, DecisionThreshold::new(g).unwrap()).unwrap();
            let pooled: Vec<f64> = maps.iter().flat_map(|p| entropy_map(p).into_inner()).collect();
            prop_assert_eq!(fit.tau(), nearest_rank_oracle(&pooled, 1.0 - fit.alpha()));
        }

        #[test]
        fn hamming_equals_amsp_at_half(p in probs(40)) {
            prop_assume!(p.iter().all(|&v| v != 0.5));
            let p = ProbVector::new(p).unwrap();
            let y_hat = threshold(&p, half());
            prop_assert_eq!(hamming_confidence(&p, &y_hat).unwrap(), amsp(&p));
        }

        #[test]
        fn tla_with_negative_tau_is_ane(p in probs(40)) {
            let p = ProbVector::new(p).unwrap();
            // Pixels with u = 0 are excluded by u > tau only if tau >= 0.
            prop_assert!((tla(&p, -1.0) - ane(&p)).abs() < 1e-15);
        }

        #[test]
        fn sdc_zero_and_one_characterisation(p in probs(30), mask in prop::collection::vec(any::<bool>(), 30)) {
            let n = p.len();
            let y_hat = BinaryMask::new(mask[..n].to_vec()).unwrap();
            let pv = ProbVector::new(p.clone()).unwrap();
            let s: f64 = p.iter().zip(y_hat.as_slice()).filter(|(_, &b)| b).map(|(v, _)| v).sum();
            let v = sdc(&pv, &y_hat).unwrap();
            prop_assert_eq!(v == 0.0, s == 0.0);
            let equal = !y_hat.is_all_zero() && p.iter().zip(y_hat.as_slice()).all(|(&v, &b)| v == f64::from(u8::from(b)));
            prop_assert_eq!(v == 1.0, equal);
            prop_assert!((0.0..=1.0).contains(&v));
        }

        #[test]
        fn estimators_permutation_invariant_and_deterministic(
            (p, mask, perm) in (1usize..25).prop_flat_map(|n| (
                prop::collection::vec(0.0..=1.0f64, n),
                prop::collection::vec(any::<bool>(), n),
                Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
            ))
        ) {
            let a = ProbVector::new(p.clone()).unwrap();
            let m = BinaryMask::new(mask.clone()).unwrap();
            let b = ProbVector::new(perm.iter().map(|&i| p[i]).collect()).unwrap();
            let mb = BinaryMask::new(perm.iter().map(|&i| mask[i]).collect()).unwrap();
            let close = |x: f64, y: f64| (x - y).abs() <= 1e-12;
            prop_assert!(close(sdc(&a, &m).unwrap(), sdc(&b, &mb).unwrap()));
            prop_assert!(close(amsp(&a), amsp(&b)));
            prop_assert!(close(ane(&a), ane(&b)));
            prop_assert_eq!(mmmc(&a), mmmc(&b));
            prop_assert!(close(tla(&a, 0.3), tla(&b, 0.3)));
            prop_assert!(close(hamming_confidence(&a, &m).unwrap(), hamming_confidence(&b, &mb).unwrap()));
            prop_assert_eq!(sdc(&a, &m).unwrap().to_bits(), sdc(&a, &m).unwrap().to_bits());
            prop_assert_eq!(mmmc(&a).to_bits(), mmmc(&a).to_bits());
        }
    }
}
