//! Window rewards: the cost-aware speedup term and the proximity bonus for
//! windows rejected at their first token.

use serde::Serialize;

use crate::models::TargetAdapter;
use crate::specdec::{SpeculativeWindow, VerificationOutcome};
use crate::{TokenId, TokenSeq};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardConfig {
    /// Relative drafter cost γ.
    pub gamma: f64,
    /// Proximity tolerance ε.
    pub epsilon: f64,
    /// Proximity reward scale η.
    pub eta: f64,
    /// Evaluate Δ for every window, not only those with `k = 0`. Rewards are
    /// unchanged; only [`WindowReward::delta`] is filled in more often.
    pub always_compute_delta: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            gamma: 0.12,
            epsilon: 0.5,
            eta: 1.0,
            always_compute_delta: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WindowReward {
    pub r_speedup: f64,
    pub r_dist: f64,
    pub total: f64,
    pub k: usize,
    pub delta: Option<f64>,
}

/// `k / (kγ + 1)`.
pub fn speedup_reward(k: usize, gamma: f64) -> f64 {
    let k = k as f64;
    k / (k * gamma + 1.0)
}

/// Greedy target continuation of length `k`; ties go to the lowest id.
pub fn reference_window<T>(target: &T, prefix: &[TokenId], k: usize) -> TokenSeq
where
    T: TargetAdapter + ?Sized,
{
    let mut ctx = prefix.to_vec();
    for _ in 0..k {
        let y = target.next_dist(&ctx).argmax();
        ctx.push(y);
    }
    ctx.split_off(prefix.len())
}

/// Cumulative target log-likelihood of `reference` minus that of `window`,
/// each scored under its own preceding tokens. A drafted token with zero
/// target mass makes the gap `+∞`.
pub fn proximity_gap<T>(window: &[TokenId], reference: &[TokenId], target: &T, prefix: &[TokenId]) -> f64
where
    T: TargetAdapter + ?Sized,
{
    assert_eq!(window.len(), reference.len(), "window/reference length mismatch");
    let score = |seq: &[TokenId]| -> f64 {
        let mut ctx = prefix.to_vec();
        let mut total = 0.0;
        for &y in seq {
            let p = target.next_dist(&ctx).prob(y);
            if p == 0.0 {
                return f64::NEG_INFINITY;
            }
            total += p.ln();
            ctx.push(y);
        }
        total
    };
    let drafted = score(window);
    if drafted == f64::NEG_INFINITY {
        return f64::INFINITY;
    }
    score(reference) - drafted
}

/// `R = k/(kγ+1) + η·1[k=0]·1[Δ<ε]`.
pub fn total_reward<T>(
    outcome: &VerificationOutcome,
    window: &SpeculativeWindow,
    target: &T,
    prefix: &[TokenId],
    cfg: &RewardConfig,
) -> WindowReward
where
    T: TargetAdapter + ?Sized,
{
    let k = outcome.accepted_len;
    let r_speedup = speedup_reward(k, cfg.gamma);
    let delta = (k == 0 || cfg.always_compute_delta).then(|| {
        let reference = reference_window(target, prefix, window.len());
        proximity_gap(&window.tokens, &reference, target, prefix)
    });
    let r_dist = match delta {
        Some(d) if k == 0 && d < cfg.epsilon => cfg.eta,
        _ => 0.0,
    };
    WindowReward {
        r_speedup,
        r_dist,
        total: r_speedup + r_dist,
        k,
        delta,
    }
}
