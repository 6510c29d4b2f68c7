//! Draft/verify speculative decoding with rejection-sampling verification.
//!
//! Random draws are organized by labeled substreams so results do not depend
//! on evaluation order: a decoding step `s` uses `rng.child_idx("step", s)`;
//! candidate `i` of that step drafts from `.child_idx("cand", i).child("draft")`
//! and verifies with `.child_idx("cand", i).child("verify")`; verification
//! position `t` draws its uniform from `.child_idx("u", t)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::models::{DraftPolicy, FeatureVector, TargetAdapter};
use crate::prob::ProbVector;
use crate::rng::RngStream;
use crate::{TokenId, TokenSeq};

/// K drafted tokens with the (temperature-1) draft distributions they were
/// verified against.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeculativeWindow {
    pub tokens: TokenSeq,
    pub draft_probs: Vec<ProbVector>,
    pub draft_logprobs: Vec<f64>,
}

impl SpeculativeWindow {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationOutcome {
    /// Drafted tokens accepted before the first rejection.
    pub accepted_len: usize,
    /// Acceptance probabilities of every position examined (`k + 1` entries
    /// on rejection, `K` on full acceptance).
    pub alphas: Vec<f64>,
    /// Accepted prefix plus one target-sampled token (correction or bonus).
    pub committed: TokenSeq,
    pub rejected_at: Option<usize>,
}

/// Feature the drafter conditions on: the target's view of the verified
/// prefix. Drafted tokens have not been through the target yet.
pub fn drafter_feature<D, T>(drafter: &D, target: &T, prefix: &[TokenId]) -> Option<FeatureVector>
where
    D: DraftPolicy + ?Sized,
    T: TargetAdapter + ?Sized,
{
    drafter.feature_dim().map(|_| target.feature(prefix))
}

/// Samples `k` tokens autoregressively from the drafter at `temperature`
/// (0 = greedy). The recorded probabilities are always at temperature 1.
pub fn draft_window<D, T>(
    drafter: &D,
    target: &T,
    prefix: &[TokenId],
    k: usize,
    temperature: f64,
    rng: &mut RngStream,
) -> SpeculativeWindow
where
    D: DraftPolicy + ?Sized,
    T: TargetAdapter + ?Sized,
{
    let feature = drafter_feature(drafter, target, prefix);
    let mut ctx = prefix.to_vec();
    let mut window = SpeculativeWindow {
        tokens: Vec::with_capacity(k),
        draft_probs: Vec::with_capacity(k),
        draft_logprobs: Vec::with_capacity(k),
    };
    for _ in 0..k {
        let q = drafter.draft_dist(&ctx, feature.as_ref());
        let token = if temperature == 1.0 {
            rng.categorical(&q)
        } else {
            rng.categorical(&q.tempered(temperature))
        };
        window.draft_logprobs.push(q.log_prob(token));
        window.draft_probs.push(q);
        window.tokens.push(token);
        ctx.push(token);
    }
    window
}

/// Rejection-sampling verification of `window` against the target.
///
/// Position `t` is accepted when `u_t < α_t = min(1, P_t(ŷ_t)/Q_t(ŷ_t))`. The
/// first rejection commits a token from the normalized residual
/// `max(P − Q, 0)`; a fully accepted window commits a bonus token from the
/// target.
pub fn verify_window<T>(window: &SpeculativeWindow, target: &T, prefix: &[TokenId], rng: &mut RngStream) -> Result<VerificationOutcome>
where
    T: TargetAdapter + ?Sized,
{
    let k = window.len();
    let mut ctx = prefix.to_vec();
    let mut alphas = Vec::with_capacity(k + 1);
    for t in 0..k {
        let p = target.next_dist(&ctx);
        let q = &window.draft_probs[t];
        let y = window.tokens[t];
        let alpha = acceptance_ratio(p.prob(y), q.prob(y));
        alphas.push(alpha);
        // `u < α` makes α = 0 a certain rejection and α = 1 a certain accept.
        let u = rng.child_idx("u", t as u64).uniform();
        if u < alpha {
            ctx.push(y);
            continue;
        }
        let residual: Vec<f64> = p
            .as_slice()
            .iter()
            .zip(q.as_slice())
            .map(|(pi, qi)| (pi - qi).max(0.0))
            .collect();
        if residual.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Invariant(format!("rejection at position {t} with zero residual mass")));
        }
        let correction = rng.child("residual").weighted(&residual) as TokenId;
        let mut committed = window.tokens[..t].to_vec();
        committed.push(correction);
        return Ok(VerificationOutcome {
            accepted_len: t,
            alphas,
            committed,
            rejected_at: Some(t),
        });
    }
    let bonus = rng.child("bonus").categorical(&target.next_dist(&ctx));
    let mut committed = window.tokens.clone();
    committed.push(bonus);
    Ok(VerificationOutcome {
        accepted_len: k,
        alphas,
        committed,
        rejected_at: None,
    })
}

fn acceptance_ratio(p: f64, q: f64) -> f64 {
    if q > 0.0 {
        (p / q).min(1.0)
    } else if p > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Substreams for candidate `index` of a step: `(draft, verify)`.
pub fn candidate_streams(step_rng: &RngStream, index: usize) -> (RngStream, RngStream) {
    let cand = step_rng.child_idx("cand", index as u64);
    (cand.child("draft"), cand.child("verify"))
}

/// Drafts `g` independent windows, verifies each on its own stream, and
/// returns the outcome with the longest accepted prefix (lowest index on
/// ties). Only `g = 1` preserves the target distribution.
pub fn multi_candidate_step<D, T>(
    drafter: &D,
    target: &T,
    prefix: &[TokenId],
    k: usize,
    g: usize,
    temperature: f64,
    rng: &RngStream,
) -> Result<VerificationOutcome>
where
    D: DraftPolicy + ?Sized,
    T: TargetAdapter + ?Sized,
{
    if g == 0 {
        return Err(Error::InvalidInput("candidate count must be ≥ 1".into()));
    }
    let mut best: Option<VerificationOutcome> = None;
    for i in 0..g {
        let (mut draft_rng, mut verify_rng) = candidate_streams(rng, i);
        let window = draft_window(drafter, target, prefix, k, temperature, &mut draft_rng);
        let outcome = verify_window(&window, target, prefix, &mut verify_rng)?;
        if best.as_ref().is_none_or(|b| outcome.accepted_len > b.accepted_len) {
            best = Some(outcome);
        }
    }
    Ok(best.expect("g ≥ 1"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeConfig {
    /// Window length K.
    pub k: usize,
    /// Candidate count G.
    pub candidates: usize,
    pub temperature: f64,
    /// Relative drafter cost γ used for the cost-model speedup.
    pub gamma: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            k: 10,
            candidates: 1,
            temperature: 1.0,
            gamma: 0.12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecodeStats {
    #[serde(rename = "tokens")]
    pub total_tokens: usize,
    #[serde(rename = "steps")]
    pub num_steps: usize,
    #[serde(skip)]
    pub accepted_tokens: usize,
    pub tau: f64,
    pub cost_units: f64,
    #[serde(rename = "speedup")]
    pub speedup_cost_model: f64,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "G")]
    pub candidates: usize,
    pub temperature: f64,
    pub seed: u64,
}

impl DecodeStats {
    fn from_counts(total_tokens: usize, num_steps: usize, accepted_tokens: usize, cfg: &DecodeConfig, seed: u64) -> Self {
        let cost_units = num_steps as f64 * (cfg.k as f64 * cfg.gamma + 1.0);
        Self {
            total_tokens,
            num_steps,
            accepted_tokens,
            tau: if num_steps > 0 { accepted_tokens as f64 / num_steps as f64 } else { 0.0 },
            cost_units,
            speedup_cost_model: if cost_units > 0.0 { total_tokens as f64 / cost_units } else { 0.0 },
            k: cfg.k,
            candidates: cfg.candidates,
            temperature: cfg.temperature,
            seed,
        }
    }

    /// Pools several runs with the same decode settings; τ is re-derived from
    /// pooled counts.
    pub fn pooled<'a>(runs: impl IntoIterator<Item = &'a DecodeStats>, cfg: &DecodeConfig, seed: u64) -> Self {
        let (mut tokens, mut steps, mut accepted) = (0, 0, 0);
        for r in runs {
            tokens += r.total_tokens;
            steps += r.num_steps;
            accepted += r.accepted_tokens;
        }
        Self::from_counts(tokens, steps, accepted, cfg, seed)
    }

    /// One JSON line with the fields `tokens, steps, tau, cost_units,
    /// speedup, K, G, temperature, seed`.
    pub fn to_record(&self) -> String {
        serde_json::to_string(self).expect("stats serialize")
    }
}

/// Runs draft/verify steps until at least `max_tokens` tokens are committed.
/// Returns every committed token (the last step may overshoot by up to K)
/// together with run statistics.
pub fn generate<D, T>(
    drafter: &D,
    target: &T,
    prompt: &[TokenId],
    max_tokens: usize,
    cfg: &DecodeConfig,
    rng: &RngStream,
) -> Result<(TokenSeq, DecodeStats)>
where
    D: DraftPolicy + ?Sized,
    T: TargetAdapter + ?Sized,
{
    if max_tokens == 0 {
        return Err(Error::InvalidInput("max_tokens must be ≥ 1".into()));
    }
    if cfg.k == 0 {
        return Err(Error::InvalidInput("window length K must be ≥ 1".into()));
    }
    let mut ctx = prompt.to_vec();
    let (mut steps, mut accepted) = (0usize, 0usize);
    while ctx.len() - prompt.len() < max_tokens {
        let step_rng = rng.child_idx("step", steps as u64);
        let outcome = multi_candidate_step(drafter, target, &ctx, cfg.k, cfg.candidates, cfg.temperature, &step_rng)?;
        accepted += outcome.accepted_len;
        steps += 1;
        ctx.extend_from_slice(&outcome.committed);
    }
    let out = ctx.split_off(prompt.len());
    let stats = DecodeStats::from_counts(out.len(), steps, accepted, cfg, rng.seed());
    Ok((out, stats))
}

/// `total_tokens / Σ_steps (K·γ + 1)`; vanilla decoding costs one unit per token.
pub fn cost_model_speedup(stats: &DecodeStats, gamma: f64) -> Result<f64> {
    if stats.num_steps == 0 {
        return Err(Error::InvalidInput("no decoding steps recorded".into()));
    }
    Ok(stats.total_tokens as f64 / (stats.num_steps as f64 * (stats.k as f64 * gamma + 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{sample_grammar_corpus, GrammarSpec};
    use crate::models::{fit_tabular_target, TabularTarget};

    /// Drafter returning a fixed distribution regardless of context.
    struct Fixed(ProbVector);

    impl DraftPolicy for Fixed {
        fn vocab_size(&self) -> usize {
            self.0.len()
        }

        fn draft_dist(&self, _: &[TokenId], _: Option<&FeatureVector>) -> ProbVector {
            self.0.clone()
        }
    }

    fn unigram_target(p: Vec<f64>) -> TabularTarget {
        let g = GrammarSpec::unigram(ProbVector::new(p).unwrap());
        fit_tabular_target(&sample_grammar_corpus(&g, 1, 20_000, 1).unwrap(), g.vocab_size(), 1, 0.0)
    }

    fn window_of(tokens: Vec<TokenId>, q: &ProbVector) -> SpeculativeWindow {
        SpeculativeWindow {
            draft_logprobs: tokens.iter().map(|&t| q.log_prob(t)).collect(),
            draft_probs: vec![q.clone(); tokens.len()],
            tokens,
        }
    }

    #[test]
    fn one_hot_drafter_is_deterministic() {
        let t = unigram_target(vec![0.5, 0.5]);
        let d = Fixed(ProbVector::one_hot(2, 1));
        let w = draft_window(&d, &t, &[0], 4, 1.0, &mut RngStream::new(0));
        assert_eq!(w.tokens, vec![1, 1, 1, 1]);
    }

    #[test]
    fn greedy_drafting_takes_argmax() {
        let t = unigram_target(vec![0.5, 0.5]);
        let d = Fixed(ProbVector::new(vec![0.2, 0.5, 0.3]).unwrap());
        let w = draft_window(&d, &t, &[0], 5, 0.0, &mut RngStream::new(4));
        assert_eq!(w.tokens, vec![1; 5]);
        assert!((w.draft_logprobs[0] - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn drafting_is_reproducible() {
        let t = unigram_target(vec![0.3, 0.3, 0.4]);
        let a = draft_window(&t, &t, &[0], 6, 1.0, &mut RngStream::new(12));
        let b = draft_window(&t, &t, &[0], 6, 1.0, &mut RngStream::new(12));
        assert_eq!(a, b);
    }

    #[test]
    fn identical_distributions_accept_everything() {
        let t = unigram_target(vec![0.3, 0.3, 0.4]);
        for s in 0..50 {
            let mut rng = RngStream::new(s);
            let w = draft_window(&t, &t, &[1], 8, 1.0, &mut rng);
            let o = verify_window(&w, &t, &[1], &mut rng).unwrap();
            assert_eq!(o.accepted_len, 8);
            assert!(o.alphas.iter().all(|&a| a == 1.0));
            assert_eq!(o.committed.len(), 9);
        }
    }

    #[test]
    fn off_support_draft_is_rejected_with_target_token() {
        let t = unigram_target(vec![1.0, 0.0, 0.0]);
        let q = ProbVector::uniform(3);
        let w = window_of(vec![2, 0], &q);
        let o = verify_window(&w, &t, &[0], &mut RngStream::new(3)).unwrap();
        assert_eq!(o.accepted_len, 0);
        assert_eq!(o.alphas, vec![0.0]);
        assert_eq!(o.committed, vec![0]);
        assert_eq!(o.rejected_at, Some(0));
    }

    #[test]
    fn hand_evaluated_alphas_and_residual() {
        // P = (0.9, 0.1), Q = (0.6, 0.4).
        let t = unigram_target(vec![0.9, 0.1]);
        let q = ProbVector::new(vec![0.6, 0.4]).unwrap();
        let p = t.next_dist(&[]);
        let w0 = window_of(vec![0], &q);
        let o0 = verify_window(&w0, &t, &[0], &mut RngStream::new(1)).unwrap();
        assert_eq!(o0.alphas[0], 1.0);
        let mut rejections = 0;
        for s in 0..2000 {
            let w1 = window_of(vec![1], &q);
            let o = verify_window(&w1, &t, &[0], &mut RngStream::new(s)).unwrap();
            assert!((o.alphas[0] - p.prob(1) / 0.4).abs() < 1e-15);
            if o.accepted_len == 0 {
                rejections += 1;
                // Residual ∝ (P0 − 0.6, 0): always token 0.
                assert_eq!(o.committed, vec![0]);
            }
        }
        assert!(rejections > 0);
    }

    #[test]
    fn single_candidate_matches_single_chain() {
        let corpus = sample_grammar_corpus(&GrammarSpec::random(3, 2, 0.5, 2).unwrap(), 4, 200, 2).unwrap();
        let t = fit_tabular_target(&corpus, 3, 2, 0.1);
        let d = Fixed(ProbVector::uniform(3));
        for s in 0..20 {
            let step = RngStream::new(s);
            let multi = multi_candidate_step(&d, &t, &[1, 2], 4, 1, 1.0, &step).unwrap();
            let (mut dr, mut vr) = candidate_streams(&step, 0);
            let w = draft_window(&d, &t, &[1, 2], 4, 1.0, &mut dr);
            assert_eq!(multi, verify_window(&w, &t, &[1, 2], &mut vr).unwrap());
        }
    }

    #[test]
    fn perfect_drafter_reaches_tau_k() {
        let t = unigram_target(vec![0.2, 0.5, 0.3]);
        let cfg = DecodeConfig {
            k: 6,
            ..Default::default()
        };
        let (out, stats) = generate(&t, &t, &[0], 500, &cfg, &RngStream::new(8)).unwrap();
        assert_eq!(stats.tau, 6.0);
        assert_eq!(out.len(), stats.total_tokens);
        assert!(out.len() >= 500);
        assert_eq!(stats.tau, stats.accepted_tokens as f64 / stats.num_steps as f64);
    }

    #[test]
    fn k_one_with_certain_acceptance() {
        let t = unigram_target(vec![0.2, 0.8]);
        let cfg = DecodeConfig {
            k: 1,
            ..Default::default()
        };
        let (_, stats) = generate(&t, &t, &[0], 100, &cfg, &RngStream::new(8)).unwrap();
        assert_eq!(stats.tau, 1.0);
    }

    fn stats(tokens: usize, steps: usize, k: usize) -> DecodeStats {
        let cfg = DecodeConfig {
            k,
            ..Default::default()
        };
        DecodeStats::from_counts(tokens, steps, 0, &cfg, 0)
    }

    #[test]
    fn cost_model_examples() {
        assert_eq!(cost_model_speedup(&stats(110, 10, 10), 0.0).unwrap(), 11.0);
        let s = cost_model_speedup(&stats(70, 10, 10), 0.12).unwrap();
        assert!((s - 7.0 / 2.2).abs() < 1e-12);
        assert!((s - 3.1818).abs() < 1e-4);
        let worst = cost_model_speedup(&stats(10, 10, 10), 0.12).unwrap();
        assert!(worst < 1.0);
        assert!(cost_model_speedup(&stats(0, 0, 10), 0.12).is_err());
    }

    #[test]
    fn record_has_expected_fields() {
        let rec: serde_json::Value = serde_json::from_str(&stats(70, 10, 10).to_record()).unwrap();
        let mut keys: Vec<_> = rec.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["G", "K", "cost_units", "seed", "speedup", "steps", "tau", "temperature", "tokens"]);
    }
}
