use std::collections::HashMap;

use crate::prob::ProbVector;
use crate::{TokenId, TokenSeq};

/// Target-side conditioning vector handed to feature-aware drafters.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// A frozen target model: exact next-token distributions plus a fixed-width
/// feature of the context. Implementations must be deterministic.
pub trait TargetAdapter: Send + Sync {
    fn vocab_size(&self) -> usize;

    fn next_dist(&self, context: &[TokenId]) -> ProbVector;

    fn feature_dim(&self) -> usize;

    fn feature(&self, context: &[TokenId]) -> FeatureVector;
}

/// Anything that proposes draft distributions. The neural drafter is the
/// trainable one; tabular copies of the target serve as perfect drafters.
pub trait DraftPolicy: Send + Sync {
    fn vocab_size(&self) -> usize;

    /// Feature dimension the policy consumes, if it is feature-conditioned.
    fn feature_dim(&self) -> Option<usize> {
        None
    }

    fn draft_dist(&self, context: &[TokenId], feature: Option<&FeatureVector>) -> ProbVector;
}

/// Additively smoothed n-gram model with recursive backoff to shorter contexts.
#[derive(Debug, Clone)]
pub struct TabularTarget {
    order: usize,
    vocab_size: usize,
    /// `tables[m]` maps length-`m` contexts to their smoothed rows.
    tables: Vec<HashMap<Vec<TokenId>, ProbVector>>,
}

/// Fits `(count(ctx, y) + λ) / (count(ctx) + λ|V|)` for every context length
/// `0..order`. Only contexts observed in the corpus get a row; the rest back
/// off to shorter ones, ending at the unigram row.
///
/// Panics if the corpus holds no tokens or `order == 0`.
pub fn fit_tabular_target(corpus: &[TokenSeq], vocab_size: usize, order: usize, smoothing: f64) -> TabularTarget {
    assert!(order >= 1, "order must be ≥ 1");
    assert!(smoothing >= 0.0, "smoothing must be non-negative");
    assert!(corpus.iter().any(|s| !s.is_empty()), "corpus has no tokens");
    let mut tables = Vec::with_capacity(order);
    for m in 0..order {
        let mut counts: HashMap<Vec<TokenId>, Vec<f64>> = HashMap::new();
        for seq in corpus {
            for i in m..seq.len() {
                let row = counts.entry(seq[i - m..i].to_vec()).or_insert_with(|| vec![0.0; vocab_size]);
                row[seq[i] as usize] += 1.0;
            }
        }
        let table = counts
            .into_iter()
            .map(|(ctx, c)| {
                let total: f64 = c.iter().sum();
                let denom = total + smoothing * vocab_size as f64;
                let mut row: Vec<f64> = c.iter().map(|&n| (n + smoothing) / denom).collect();
                // Renormalize so the row sums to one up to a single rounding.
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|p| *p /= s);
                (ctx, ProbVector::new(row).expect("smoothed row is a distribution"))
            })
            .collect();
        tables.push(table);
    }
    TabularTarget {
        order,
        vocab_size,
        tables,
    }
}

impl TabularTarget {
    pub fn order(&self) -> usize {
        self.order
    }

    fn lookup(&self, context: &[TokenId]) -> &ProbVector {
        let longest = (self.order - 1).min(context.len());
        for m in (0..=longest).rev() {
            if let Some(row) = self.tables[m].get(&context[context.len() - m..]) {
                return row;
            }
        }
        unreachable!("unigram row always present")
    }
}

impl TargetAdapter for TabularTarget {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_dist(&self, context: &[TokenId]) -> ProbVector {
        self.lookup(context).clone()
    }

    fn feature_dim(&self) -> usize {
        (self.order - 1) * self.vocab_size
    }

    /// One-hot encodings of the last `order − 1` tokens, oldest first;
    /// slots before the start of the context stay zero.
    fn feature(&self, context: &[TokenId]) -> FeatureVector {
        let slots = self.order - 1;
        let mut v = vec![0.0; slots * self.vocab_size];
        for s in 0..slots {
            let back = slots - s;
            if back <= context.len() {
                let tok = context[context.len() - back] as usize;
                v[s * self.vocab_size + tok] = 1.0;
            }
        }
        FeatureVector(v)
    }
}

impl DraftPolicy for TabularTarget {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn draft_dist(&self, context: &[TokenId], _feature: Option<&FeatureVector>) -> ProbVector {
        self.next_dist(context)
    }
}
