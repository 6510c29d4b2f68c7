//! Acceptance/divergence identities, the alignment metric, the easy/hard
//! window partition, and reward-trend comparisons against a synthetic cost
//! model.

use std::fmt::Write as _;

use serde::Serialize;

use crate::adaw::kl_divergence;
use crate::error::{Error, Result};
use crate::models::{DraftPolicy, TargetAdapter};
use crate::prob::ProbVector;
use crate::rewards::speedup_reward;
use crate::rng::RngStream;
use crate::specdec::{draft_window, verify_window};
use crate::TokenSeq;

/// Cost-aware reward at `γ = 0.125` for `k = 1..=7`, to two decimals.
pub const REFERENCE_COST_AWARE_REWARDS: [(usize, f64); 7] =
    [(1, 0.89), (2, 1.60), (3, 2.18), (4, 2.67), (5, 3.08), (6, 3.43), (7, 3.74)];

/// Target `p` and draft `q` over the same vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct DistPair {
    pub p: ProbVector,
    pub q: ProbVector,
}

impl DistPair {
    pub fn new(p: ProbVector, q: ProbVector) -> Result<Self> {
        if p.len() != q.len() {
            return Err(Error::InvalidInput(format!("pair sizes differ: {} vs {}", p.len(), q.len())));
        }
        Ok(Self { p, q })
    }

    /// Independent symmetric Dirichlet(1) draws for `p` and `q`.
    pub fn random(n: usize, rng: &mut RngStream) -> Self {
        let p = rng.dirichlet(1.0, n);
        let q = rng.dirichlet(1.0, n);
        Self { p, q }
    }
}

/// `½ Σ |p − q|`.
pub fn total_variation(pair: &DistPair) -> f64 {
    0.5 * pair
        .p
        .as_slice()
        .iter()
        .zip(pair.q.as_slice())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
}

/// `Σ min(p, q)`, the expected acceptance rate of a `q`-draft against `p`.
pub fn acceptance_probability(pair: &DistPair) -> f64 {
    pair.p.as_slice().iter().zip(pair.q.as_slice()).map(|(a, b)| a.min(*b)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PinskerCheck {
    pub alpha: f64,
    pub lower_bound: f64,
    pub holds: bool,
}

/// Compares `α` with `1 − sqrt(KL(p‖q)/2)`.
pub fn pinsker_check(pair: &DistPair) -> PinskerCheck {
    let alpha = acceptance_probability(pair);
    let lower_bound = 1.0 - (kl_divergence(&pair.p, &pair.q) / 2.0).sqrt();
    PinskerCheck {
        alpha,
        lower_bound,
        holds: alpha >= lower_bound - 1e-12,
    }
}

/// Empirical acceptance rate: draw `y ~ q`, accept with `min(1, p(y)/q(y))`.
pub fn monte_carlo_acceptance(pair: &DistPair, trials: usize, rng: &mut RngStream) -> f64 {
    assert!(trials > 0, "need at least one trial");
    let mut accepted = 0usize;
    for _ in 0..trials {
        let y = rng.categorical(&pair.q);
        let ratio = (pair.p.prob(y) / pair.q.prob(y)).min(1.0);
        if rng.uniform() < ratio {
            accepted += 1;
        }
    }
    accepted as f64 / trials as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NablaRecord {
    pub delta: f64,
    pub nabla: f64,
}

/// `∇ = exp(δ) − δ − 1` for `δ = log π_target − log π_θ`.
pub fn nabla_metric(target_logprob: f64, draft_logprob: f64) -> NablaRecord {
    let delta = target_logprob - draft_logprob;
    NablaRecord {
        delta,
        nabla: delta.exp_m1() - delta,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PinskerSweep {
    pub vocab_size: usize,
    pub pairs: usize,
    pub violations: usize,
    /// Largest `|Σ min(p,q) − (1 − TV)|` seen.
    pub max_identity_error: f64,
    /// Smallest `α − (1 − sqrt(KL/2))` seen.
    pub min_slack: f64,
}

/// Runs the acceptance identity and the Pinsker bound over `pairs` random
/// Dirichlet pairs of size `n`.
pub fn pinsker_sweep(n: usize, pairs: usize, rng: &mut RngStream) -> PinskerSweep {
    let mut out = PinskerSweep {
        vocab_size: n,
        pairs,
        violations: 0,
        max_identity_error: 0.0,
        min_slack: f64::INFINITY,
    };
    for _ in 0..pairs {
        let pair = DistPair::random(n, rng);
        let check = pinsker_check(&pair);
        if !check.holds {
            out.violations += 1;
        }
        out.min_slack = out.min_slack.min(check.alpha - check.lower_bound);
        let err = (check.alpha - (1.0 - total_variation(&pair))).abs();
        out.max_identity_error = out.max_identity_error.max(err);
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct WindowSet {
    pub indices: Vec<usize>,
    pub accepted: Vec<usize>,
    /// Mean accepted length of the members.
    pub tau: f64,
    /// Mean `∇` over every drafted token of the members.
    pub nabla_mean: f64,
}

impl WindowSet {
    fn finish(&mut self, nabla_sum: f64, tokens: usize) {
        if !self.accepted.is_empty() {
            self.tau = self.accepted.iter().sum::<usize>() as f64 / self.accepted.len() as f64;
        }
        if tokens > 0 {
            self.nabla_mean = nabla_sum / tokens as f64;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EasyHardReport {
    /// Windows fully accepted by the baseline (`k = K`).
    pub easy: WindowSet,
    /// Windows truncated early (`k < K`).
    pub hard: WindowSet,
}

/// Drafts and verifies one window per prefix with `baseline` and splits them
/// by full acceptance. Prefix `i` uses `rng.child_idx("window", i)`.
pub fn easy_hard_partition<D, T>(baseline: &D, target: &T, prefixes: &[TokenSeq], k: usize, rng: &RngStream) -> Result<EasyHardReport>
where
    D: DraftPolicy + ?Sized,
    T: TargetAdapter + ?Sized,
{
    let mut easy = WindowSet::default();
    let mut hard = WindowSet::default();
    let (mut easy_nabla, mut hard_nabla) = (0.0, 0.0);
    let (mut easy_tokens, mut hard_tokens) = (0, 0);
    for (i, prefix) in prefixes.iter().enumerate() {
        let r = rng.child_idx("window", i as u64);
        let window = draft_window(baseline, target, prefix, k, 1.0, &mut r.child("draft"));
        let outcome = verify_window(&window, target, prefix, &mut r.child("verify"))?;
        let mut ctx = prefix.clone();
        let mut nabla = 0.0;
        for (t, &y) in window.tokens.iter().enumerate() {
            nabla += nabla_metric(target.next_dist(&ctx).log_prob(y), window.draft_logprobs[t]).nabla;
            ctx.push(y);
        }
        let (set, sum, count) = if outcome.accepted_len == k {
            (&mut easy, &mut easy_nabla, &mut easy_tokens)
        } else {
            (&mut hard, &mut hard_nabla, &mut hard_tokens)
        };
        set.indices.push(i);
        set.accepted.push(outcome.accepted_len);
        *sum += nabla;
        *count += k;
    }
    easy.finish(easy_nabla, easy_tokens);
    hard.finish(hard_nabla, hard_tokens);
    Ok(EasyHardReport { easy, hard })
}

/// Deterministic stand-in for measured serving cost, in units of one target
/// forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SyntheticCostModel {
    pub draft_token_cost: f64,
    pub verify_cost: f64,
    pub step_overhead: f64,
}

impl Default for SyntheticCostModel {
    fn default() -> Self {
        Self {
            draft_token_cost: 0.2,
            verify_cost: 1.0,
            step_overhead: 0.05,
        }
    }
}

impl SyntheticCostModel {
    /// Tokens gained per step relative to vanilla decoding (`verify_cost` per token).
    pub fn measured_reward(&self, k: usize) -> f64 {
        let k = k as f64;
        k * self.verify_cost / (k * self.draft_token_cost + self.verify_cost + self.step_overhead)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RewardRow {
    pub k: usize,
    pub measured: f64,
    pub cost_aware: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RewardTable {
    pub gamma: f64,
    pub rows: Vec<RewardRow>,
    pub measured_monotone: bool,
    pub cost_aware_monotone: bool,
    /// Both columns sort the `k` values identically.
    pub same_ordering: bool,
}

impl RewardTable {
    /// Plot-ready `k  measured  cost_aware` columns.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("k\tmeasured\tcost_aware\n");
        for r in &self.rows {
            writeln!(s, "{}\t{:.6}\t{:.6}", r.k, r.measured, r.cost_aware).unwrap();
        }
        s
    }
}

/// Compares the cost-aware reward with the synthetic measured reward for each
/// `γ` over the given accepted lengths.
pub fn reward_table_compare(gammas: &[f64], ks: &[usize], cost: &SyntheticCostModel) -> Result<Vec<RewardTable>> {
    if gammas.is_empty() || ks.is_empty() {
        return Err(Error::InvalidInput("reward table needs gammas and accepted lengths".into()));
    }
    let mut sorted_ks = ks.to_vec();
    sorted_ks.sort_unstable();
    Ok(gammas
        .iter()
        .map(|&gamma| {
            let rows: Vec<RewardRow> = sorted_ks
                .iter()
                .map(|&k| RewardRow {
                    k,
                    measured: cost.measured_reward(k),
                    cost_aware: speedup_reward(k, gamma),
                })
                .collect();
            let nondecreasing = |f: fn(&RewardRow) -> f64| rows.windows(2).all(|w| f(&w[1]) >= f(&w[0]));
            let rank = |f: fn(&RewardRow) -> f64| {
                let mut idx: Vec<usize> = (0..rows.len()).collect();
                idx.sort_by(|&a, &b| f(&rows[a]).total_cmp(&f(&rows[b])).then(a.cmp(&b)));
                idx
            };
            RewardTable {
                gamma,
                measured_monotone: nondecreasing(|r| r.measured),
                cost_aware_monotone: nondecreasing(|r| r.cost_aware),
                same_ordering: rank(|r| r.measured) == rank(|r| r.cost_aware),
                rows,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(p: &[f64], q: &[f64]) -> DistPair {
        DistPair::new(ProbVector::new(p.to_vec()).unwrap(), ProbVector::new(q.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn tv_and_alpha_examples() {
        let same = pair(&[0.3, 0.7], &[0.3, 0.7]);
        assert_eq!(total_variation(&same), 0.0);
        assert_eq!(acceptance_probability(&same), 1.0);
        assert_eq!(total_variation(&pair(&[1.0, 0.0], &[0.0, 1.0])), 1.0);
        let pq = pair(&[0.9, 0.1], &[0.6, 0.4]);
        assert!((total_variation(&pq) - 0.3).abs() < 1e-15);
        assert!((acceptance_probability(&pq) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn pinsker_examples() {
        let same = pinsker_check(&pair(&[0.3, 0.7], &[0.3, 0.7]));
        assert_eq!((same.alpha, same.lower_bound, same.holds), (1.0, 1.0, true));
        let c = pinsker_check(&pair(&[0.9, 0.1], &[0.6, 0.4]));
        assert!((c.alpha - 0.7).abs() < 1e-12);
        assert!((c.lower_bound - 0.6636).abs() < 1e-4);
        assert!(c.holds);
    }

    #[test]
    fn monte_carlo_edge_cases() {
        let mut rng = RngStream::new(0);
        assert_eq!(monte_carlo_acceptance(&pair(&[0.3, 0.7], &[0.3, 0.7]), 1000, &mut rng), 1.0);
        assert_eq!(monte_carlo_acceptance(&pair(&[1.0, 0.0], &[0.0, 1.0]), 1000, &mut rng), 0.0);
    }

    #[test]
    fn nabla_examples() {
        assert_eq!(nabla_metric(0.0, 0.0).nabla, 0.0);
        assert!((nabla_metric(1.0, 0.0).nabla - 0.71828).abs() < 1e-5);
        assert!((nabla_metric(-1.0, 0.0).nabla - 0.36788).abs() < 1e-5);
    }

    #[test]
    fn reward_table_zero_and_trend() {
        let tables = reward_table_compare(&[0.12], &[0, 1, 2, 3, 4, 5, 6, 7], &SyntheticCostModel::default()).unwrap();
        let t = &tables[0];
        assert_eq!((t.rows[0].measured, t.rows[0].cost_aware), (0.0, 0.0));
        assert!(t.rows.windows(2).all(|w| w[1].cost_aware > w[0].cost_aware && w[1].measured > w[0].measured));
        assert!(t.same_ordering && t.measured_monotone && t.cost_aware_monotone);
        assert!(t.to_tsv().starts_with("k\tmeasured\tcost_aware\n0\t"));
    }
}
