//! Probability distributions over a small token vocabulary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TokenId;
use crate::rng::UniformSource;

/// Tolerance on `|Σ p - 1|` for a valid distribution.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// A normalized distribution: non-negative entries summing to 1 within
/// [`SUM_TOLERANCE`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbDist(Vec<f64>);

impl ProbDist {
    /// Wraps already-normalized probabilities, checking the invariants.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidDistribution(format!(
                "need at least 2 entries, got {}",
                probs.len()
            )));
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < 0.0)
        {
            return Err(Error::InvalidDistribution(format!(
                "entry {i} is {p}"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!(
                "entries sum to {total}"
            )));
        }
        Ok(Self(probs))
    }

    pub fn uniform(len: usize) -> Self {
        Self(vec![1.0 / len as f64; len])
    }

    pub fn one_hot(len: usize, index: usize) -> Self {
        let mut probs = vec![0.0; len];
        probs[index] = 1.0;
        Self(probs)
    }

    /// Numerically stable softmax of arbitrary real scores.
    pub fn softmax(scores: &[f64]) -> Self {
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        Self(exps.into_iter().map(|e| e / total).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn prob(&self, token: TokenId) -> f64 {
        self.0[token.index()]
    }

    /// Lowest index among the maximal entries.
    pub fn argmax(&self) -> TokenId {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate().skip(1) {
            if p > self.0[best] {
                best = i;
            }
        }
        TokenId::from_index(best)
    }
}

impl TryFrom<Vec<f64>> for ProbDist {
    type Error = Error;

    fn try_from(probs: Vec<f64>) -> Result<Self> {
        ProbDist::new(probs)
    }
}

impl From<ProbDist> for Vec<f64> {
    fn from(d: ProbDist) -> Self {
        d.0
    }
}

/// Scales non-negative weights to sum to one.
pub fn normalize(weights: &[f64]) -> Result<ProbDist> {
    if weights.len() < 2 {
        return Err(Error::InvalidDistribution(format!(
            "need at least 2 weights, got {}",
            weights.len()
        )));
    }
    if let Some((index, &value)) = weights
        .iter()
        .enumerate()
        .find(|(_, w)| **w < 0.0 || w.is_nan())
    {
        return Err(Error::NegativeWeight { index, value });
    }
    let total: f64 = weights.iter().sum();
    if total == 0.0 {
        return Err(Error::AllZero);
    }
    if !total.is_finite() {
        return Err(Error::InvalidDistribution(format!(
            "weights sum to {total}"
        )));
    }
    Ok(ProbDist(weights.iter().map(|w| w / total).collect()))
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(d: &ProbDist) -> f64 {
    let h: f64 = d
        .0
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    h.max(0.0)
}

/// Inverse-CDF sample from one uniform draw, scanning tokens in index order.
pub fn sample<U: UniformSource + ?Sized>(d: &ProbDist, rng: &mut U) -> TokenId {
    let u = rng.next_uniform();
    let mut cdf = 0.0;
    for (i, &p) in d.0.iter().enumerate() {
        cdf += p;
        if u < cdf {
            return TokenId::from_index(i);
        }
    }
    // Rounding left the total a hair below u; fall back to the last
    // token that has mass.
    let last = d.0.iter().rposition(|&p| p > 0.0).unwrap_or(0);
    TokenId::from_index(last)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(&[2.0, 2.0]).unwrap().probs(), &[0.5, 0.5]);
        assert_eq!(normalize(&[0.0, 0.0, 1.0]).unwrap().probs(), &[0.0, 0.0, 1.0]);
        assert_eq!(normalize(&[1.0, 3.0]).unwrap().probs(), &[0.25, 0.75]);
    }

    #[test]
    fn normalize_errors() {
        assert!(matches!(normalize(&[0.0, 0.0]), Err(Error::AllZero)));
        assert!(matches!(
            normalize(&[1.0, -0.5]),
            Err(Error::NegativeWeight { index: 1, .. })
        ));
    }

    #[test]
    fn entropy_examples() {
        let half = ProbDist::new(vec![0.5, 0.5]).unwrap();
        assert!((entropy(&half) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(entropy(&ProbDist::one_hot(2, 0)), 0.0);
        let skewed = ProbDist::new(vec![0.95, 0.05]).unwrap();
        // -(0.95 ln 0.95 + 0.05 ln 0.05), summed in extended precision.
        assert!((entropy(&skewed) - 0.198_515).abs() < 1e-6);
        assert!((entropy(&skewed) - 0.198_515_243_345_872_6).abs() < 1e-12);
    }

    #[test]
    fn sample_degenerate_and_deterministic() {
        let d = ProbDist::one_hot(2, 0);
        for seed in 0..50 {
            assert_eq!(sample(&d, &mut Rng::new(seed)), TokenId(0));
        }
        let d = ProbDist::new(vec![0.3, 0.7]).unwrap();
        assert_eq!(sample(&d, &mut Rng::new(42)), sample(&d, &mut Rng::new(42)));
    }

    #[test]
    fn sample_frequency_within_3_sigma() {
        let d = ProbDist::new(vec![0.3, 0.7]).unwrap();
        let mut rng = Rng::new(2024);
        let n = 100_000;
        let ones = (0..n).filter(|_| sample(&d, &mut rng) == TokenId(1)).count();
        let freq = ones as f64 / n as f64;
        assert!((0.695..=0.705).contains(&freq), "freq {freq}");
    }

    #[test]
    fn argmax_ties_go_low() {
        let d = ProbDist::new(vec![0.1, 0.45, 0.45]).unwrap();
        assert_eq!(d.argmax(), TokenId(1));
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(ProbDist::new(vec![0.5, 0.6]).is_err());
        assert!(ProbDist::new(vec![1.0]).is_err());
        assert!(ProbDist::new(vec![1.5, -0.5]).is_err());
    }
}
