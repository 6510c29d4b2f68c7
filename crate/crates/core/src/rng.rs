//! Labeled, splittable random streams.
//!
//! Every stream is keyed by a 32-byte digest. A child stream's key is the
//! SHA-256 of the parent key and the child label, so two children with
//! distinct labels draw from unrelated ChaCha streams and the values a child
//! produces never depend on how much its parent or siblings consumed.

use rand::{Rng, RngCore, SeedableRng};
use rand_distr::{Distribution, Gamma};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::prob::ProbVector;
use crate::TokenId;

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    key: [u8; 32],
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        let mut h = Sha256::new();
        h.update(b"ppow-root");
        h.update(seed.to_le_bytes());
        Self::from_key(seed, h.finalize().into())
    }

    fn from_key(seed: u64, key: [u8; 32]) -> Self {
        Self {
            seed,
            key,
            rng: ChaCha8Rng::from_seed(key),
        }
    }

    /// Root seed this stream descends from.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn child(&self, label: &str) -> Self {
        let mut h = Sha256::new();
        h.update(self.key);
        h.update(b"/s:");
        h.update((label.len() as u64).to_le_bytes());
        h.update(label.as_bytes());
        Self::from_key(self.seed, h.finalize().into())
    }

    /// Child stream indexed by a label and an integer, e.g. `("step", 17)`.
    pub fn child_idx(&self, label: &str, index: u64) -> Self {
        let mut h = Sha256::new();
        h.update(self.key);
        h.update(b"/i:");
        h.update((label.len() as u64).to_le_bytes());
        h.update(label.as_bytes());
        h.update(index.to_le_bytes());
        Self::from_key(self.seed, h.finalize().into())
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    /// Inverse-CDF draw from a categorical distribution.
    pub fn categorical(&mut self, probs: &ProbVector) -> TokenId {
        sample_weights(probs.as_slice(), self.uniform()) as TokenId
    }

    /// Symmetric Dirichlet(`alpha`) draw over `n` categories, via normalized
    /// Gamma(`alpha`, 1) variates.
    pub fn dirichlet(&mut self, alpha: f64, n: usize) -> ProbVector {
        let gamma = Gamma::new(alpha, 1.0).expect("positive concentration");
        loop {
            let w: Vec<f64> = (0..n).map(|_| gamma.sample(self)).collect();
            if let Ok(p) = ProbVector::from_weights(w) {
                return p;
            }
        }
    }

    /// Draw an index proportional to non-negative `weights` (need not be normalized).
    pub fn weighted(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        sample_weights(weights, self.uniform() * total)
    }
}

fn sample_weights(weights: &[f64], target: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last_positive = i;
            if target < acc {
                return i;
            }
        }
    }
    // Rounding left `target` past the accumulated mass.
    last_positive
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}
