//! Exact categorical distributions over a finite vocabulary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::TokenId;

/// Probabilities below this are clamped before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-300;

/// Tolerance on `Σp = 1` accepted by [`ProbVector::new`].
pub const SUM_TOLERANCE: f64 = 1e-12;

/// `ln(max(p, LOG_FLOOR))`.
#[inline]
pub fn floored_ln(p: f64) -> f64 {
    p.max(LOG_FLOOR).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty".into()));
        }
        if let Some(bad) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidDistribution(format!("entry {bad} is not a finite non-negative value")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("sums to {sum}")));
        }
        Ok(Self(probs))
    }

    /// Normalizes non-negative weights into a distribution.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidDistribution("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidDistribution("weights have zero total mass".into()));
        }
        Ok(Self(weights.into_iter().map(|w| w / total).collect()))
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform distribution over an empty vocabulary");
        Self(vec![1.0 / n as f64; n])
    }

    pub fn one_hot(n: usize, index: usize) -> Self {
        assert!(index < n, "one-hot index {index} out of range {n}");
        let mut v = vec![0.0; n];
        v[index] = 1.0;
        Self(v)
    }

    /// Numerically stable softmax. Every entry is strictly positive for
    /// finite logits whose spread stays below ~700.
    pub fn softmax(logits: &[f64]) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut v: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let total: f64 = v.iter().sum();
        for p in &mut v {
            *p /= total;
        }
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    #[inline]
    pub fn prob(&self, token: TokenId) -> f64 {
        self.0[token as usize]
    }

    #[inline]
    pub fn log_prob(&self, token: TokenId) -> f64 {
        floored_ln(self.prob(token))
    }

    /// Most probable token; ties go to the lowest id.
    pub fn argmax(&self) -> TokenId {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best as TokenId
    }

    /// Natural-log Shannon entropy, with `0·ln 0 = 0`.
    pub fn entropy(&self) -> f64 {
        -self.0.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
    }

    /// `p^(1/T)` renormalized. `T = 0` is the argmax one-hot.
    pub fn tempered(&self, temperature: f64) -> Self {
        if temperature <= 0.0 {
            return Self::one_hot(self.len(), self.argmax() as usize);
        }
        if temperature == 1.0 {
            return self.clone();
        }
        let scaled: Vec<f64> = self
            .0
            .iter()
            .map(|&p| if p > 0.0 { p.ln() / temperature } else { f64::NEG_INFINITY })
            .collect();
        Self::softmax(&scaled)
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(p: ProbVector) -> Self {
        p.0
    }
}

impl AsRef<[f64]> for ProbVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_vectors() {
        assert!(ProbVector::new(vec![]).is_err());
        assert!(ProbVector::new(vec![0.5, 0.6]).is_err());
        assert!(ProbVector::new(vec![1.5, -0.5]).is_err());
        assert!(ProbVector::new(vec![f64::NAN, 1.0]).is_err());
        assert!(ProbVector::new(vec![0.25, 0.75]).is_ok());
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(ProbVector::uniform(4).argmax(), 0);
        assert_eq!(ProbVector::new(vec![0.2, 0.4, 0.4]).unwrap().argmax(), 1);
    }

    #[test]
    fn tempered_limits() {
        let p = ProbVector::new(vec![0.1, 0.6, 0.3]).unwrap();
        assert_eq!(p.tempered(0.0), ProbVector::one_hot(3, 1));
        assert_eq!(p.tempered(1.0), p);
        let sharp = p.tempered(0.5);
        assert!((sharp.prob(1) - 0.36 / 0.46).abs() < 1e-12);
    }

    #[test]
    fn log_prob_floors_zero() {
        let p = ProbVector::one_hot(2, 0);
        assert_eq!(p.log_prob(1), LOG_FLOOR.ln());
        assert!(p.log_prob(1).is_finite());
    }
}
