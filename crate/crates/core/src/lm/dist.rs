use serde::{Deserialize, Serialize};

use super::TokenId;

/// Probability vector over the vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution(Vec<f64>);

impl Distribution {
    /// Wraps already-normalized probabilities.
    pub fn from_probs(probs: Vec<f64>) -> Self {
        debug_assert!(probs.iter().all(|&p| p >= 0.0 && p.is_finite()));
        Self(probs)
    }

    /// Normalizes non-negative weights. Returns `None` when they sum to zero.
    pub fn from_weights(mut weights: Vec<f64>) -> Option<Self> {
        let total: f64 = weights.iter().sum();
        if !total.is_finite() || total <= 0.0 {
            return None;
        }
        for w in &mut weights {
            *w /= total;
        }
        Some(Self(weights))
    }

    pub fn uniform(size: usize) -> Self {
        Self(vec![1.0 / size as f64; size])
    }

    /// Point mass on `token`.
    pub fn one_hot(size: usize, token: TokenId) -> Self {
        let mut probs = vec![0.0; size];
        probs[token] = 1.0;
        Self(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn prob(&self, token: TokenId) -> f64 {
        self.0[token]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Highest-probability token; ties go to the lowest id.
    pub fn argmax(&self) -> TokenId {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate().skip(1) {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }

    /// Zero-based rank of `token` when sorting by descending probability with
    /// ties broken toward lower ids.
    pub fn rank(&self, token: TokenId) -> usize {
        let p = self.0[token];
        self.0
            .iter()
            .enumerate()
            .filter(|&(i, &q)| q > p || (q == p && i < token))
            .count()
    }

    /// Number of tokens with strictly higher probability than `token`.
    pub fn strict_rank(&self, token: TokenId) -> usize {
        let p = self.0[token];
        self.0.iter().filter(|&&q| q > p).count()
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self
            .0
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum::<f64>()
    }

    /// `probs^(1/t)` renormalized. Temperature 0 yields the argmax point mass.
    pub fn tempered(&self, temperature: f64) -> Self {
        if temperature == 0.0 {
            return Self::one_hot(self.len(), self.argmax());
        }
        if temperature == 1.0 {
            return self.clone();
        }
        let max_ln = self.0[self.argmax()].ln();
        let weights = self
            .0
            .iter()
            .map(|&p| if p > 0.0 { ((p.ln() - max_ln) / temperature).exp() } else { 0.0 })
            .collect();
        Self::from_weights(weights).expect("argmax weight is 1")
    }

    /// Normalized `max(0, self - other)`, or `None` if it vanishes.
    pub fn residual(&self, other: &Distribution) -> Option<Self> {
        let weights = self
            .0
            .iter()
            .zip(&other.0)
            .map(|(&p, &q)| (p - q).max(0.0))
            .collect();
        Self::from_weights(weights)
    }
}
