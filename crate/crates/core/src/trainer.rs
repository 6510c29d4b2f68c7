//! Window-level policy optimization of the drafter.
//!
//! Each step scores a target-generated response for draft/target divergence,
//! picks a window start, drafts a group of windows from that prefix, rewards
//! them by verification outcome, normalizes rewards within the group, and
//! takes one ascent step on the clipped ratio objective with a KL anchor to
//! the frozen target. A continued-supervised arm shares the same state and
//! step budget for comparisons.

use serde::Serialize;

use crate::adaw::{criticality_profile_from, sample_window_start, window_scores, CurriculumSchedule};
use crate::error::{Error, Result};
use crate::models::{logprob_upstream, sft_step, DraftPolicy, DrafterParameters, FeatureVector, TargetAdapter, WarmupSchedule};
use crate::prob::floored_ln;
use crate::rewards::{total_reward, RewardConfig, WindowReward};
use crate::rng::RngStream;
use crate::specdec::{draft_window, drafter_feature, generate, verify_window, DecodeConfig, DecodeStats, SpeculativeWindow, VerificationOutcome};
use crate::{TokenId, TokenSeq};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub eps_clip: f64,
    /// KL coefficient β on `KL(π_θ‖π_target)`.
    pub kl_beta: f64,
    /// Rollout group size.
    pub group_size: usize,
    /// Window length K.
    pub window: usize,
    pub reward: RewardConfig,
    /// Peak learning rate. The large-model value is 5e-6; toy drafters use 1e-3.
    pub lr: f64,
    pub warmup_ratio: f64,
    /// Stabilizer δ in `(R − μ)/(σ + δ)`.
    pub adv_delta: f64,
    pub total_steps: usize,
    pub curriculum: CurriculumSchedule,
    /// Divergence-aware window selection; `false` samples starts uniformly.
    pub adaw: bool,
    /// Optimization passes over each rollout group.
    pub inner_epochs: usize,
    /// Tokens of target response scored per step.
    pub response_len: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eps_clip: 0.2,
            kl_beta: 0.03,
            group_size: 8,
            window: 10,
            reward: RewardConfig::default(),
            lr: 1e-3,
            warmup_ratio: 0.05,
            adv_delta: 1e-8,
            total_steps: 5000,
            curriculum: CurriculumSchedule::default(),
            adaw: true,
            inner_epochs: 1,
            response_len: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.eps_clip > 0.0 && self.eps_clip < 1.0) {
            return bad("eps_clip must lie in (0, 1)");
        }
        if self.kl_beta.is_nan() || self.kl_beta < 0.0 {
            return bad("kl_beta must be ≥ 0");
        }
        if self.group_size < 2 {
            return bad("group_size must be ≥ 2");
        }
        if self.adv_delta.is_nan() || self.adv_delta <= 0.0 {
            return bad("adv_delta must be > 0");
        }
        if self.window == 0 {
            return bad("window must be ≥ 1");
        }
        if self.response_len < self.window {
            return bad("response_len must be ≥ window");
        }
        if self.lr.is_nan() || self.lr < 0.0 || !(0.0..=1.0).contains(&self.warmup_ratio) {
            return bad("lr must be ≥ 0 and warmup_ratio in [0, 1]");
        }
        if self.inner_epochs == 0 {
            return bad("inner_epochs must be ≥ 1");
        }
        if !(self.reward.gamma > 0.0 && self.reward.epsilon > 0.0 && self.reward.eta >= 0.0) {
            return bad("reward needs gamma > 0, epsilon > 0, eta ≥ 0");
        }
        Ok(())
    }

    pub fn schedule(&self) -> WarmupSchedule {
        WarmupSchedule::from_ratio(self.lr, self.warmup_ratio, self.total_steps)
    }
}

/// `G` windows drafted from one prefix by a frozen snapshot.
#[derive(Debug, Clone)]
pub struct RolloutGroup {
    pub prefix: TokenSeq,
    pub feature: Option<FeatureVector>,
    pub windows: Vec<SpeculativeWindow>,
    pub outcomes: Vec<VerificationOutcome>,
    pub rewards: Vec<WindowReward>,
    pub advantages: Vec<f64>,
    /// `log π_old(ŷ_{i,t})` under the snapshot that drafted the windows.
    pub old_logprobs: Vec<Vec<f64>>,
}

/// `(R_i − μ)/(σ + δ)` with the population standard deviation. A group whose
/// rewards are all equal gets exactly zero advantages.
pub fn group_advantages(rewards: &[f64], delta: f64) -> Vec<f64> {
    let n = rewards.len() as f64;
    if rewards.windows(2).all(|w| w[0] == w[1]) {
        return vec![0.0; rewards.len()];
    }
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    rewards.iter().map(|r| (r - mean) / (sd + delta)).collect()
}

/// Drafts `group_size` windows at temperature 1 from `snapshot`, verifies and
/// rewards each, and normalizes rewards into advantages. Window `i` draws from
/// `rng.child_idx("rollout", i)`.
pub fn collect_rollout_group<D, T>(snapshot: &D, target: &T, prefix: &[TokenId], cfg: &TrainConfig, rng: &RngStream) -> Result<RolloutGroup>
where
    D: DraftPolicy + ?Sized,
    T: TargetAdapter + ?Sized,
{
    let g = cfg.group_size;
    let mut group = RolloutGroup {
        prefix: prefix.to_vec(),
        feature: drafter_feature(snapshot, target, prefix),
        windows: Vec::with_capacity(g),
        outcomes: Vec::with_capacity(g),
        rewards: Vec::with_capacity(g),
        advantages: Vec::new(),
        old_logprobs: Vec::with_capacity(g),
    };
    for i in 0..g {
        let r = rng.child_idx("rollout", i as u64);
        let window = draft_window(snapshot, target, prefix, cfg.window, 1.0, &mut r.child("draft"));
        let outcome = verify_window(&window, target, prefix, &mut r.child("verify"))?;
        let reward = total_reward(&outcome, &window, target, prefix, &cfg.reward);
        group.old_logprobs.push(window.draft_logprobs.clone());
        group.windows.push(window);
        group.outcomes.push(outcome);
        group.rewards.push(reward);
    }
    let totals: Vec<f64> = group.rewards.iter().map(|r| r.total).collect();
    group.advantages = group_advantages(&totals, cfg.adv_delta);
    Ok(group)
}

#[derive(Debug, Clone)]
pub struct ObjectiveEval {
    pub value: f64,
    /// `∂J/∂θ`; ascend along it.
    pub grad: DrafterParameters,
    /// Mean clipped surrogate (the `J` term without the KL penalty).
    pub surrogate: f64,
    /// Mean `KL(π_θ‖π_target)` over the group's drafted positions.
    pub kl_mean: f64,
    /// Share of positions whose surrogate sits on the clipped branch.
    pub clip_fraction: f64,
    /// Every ratio `r_{i,t}`, row-major by window.
    pub ratios: Vec<f64>,
}

/// `J(θ) = 1/G Σ_i 1/K Σ_t [min(r Â, clip(r, 1±ε) Â) − β KL(π_θ‖π_target)]`
/// with its exact gradient. The KL is summed over the whole vocabulary at
/// each drafted context `prefix + ŷ_{i,<t}`.
pub fn ppow_objective<T>(group: &RolloutGroup, current: &DrafterParameters, target: &T, cfg: &TrainConfig) -> Result<ObjectiveEval>
where
    T: TargetAdapter + ?Sized,
{
    let g = group.windows.len();
    if g == 0 {
        return Err(Error::InvalidInput("empty rollout group".into()));
    }
    let mut grad = current.zeros_like();
    let (mut value, mut surrogate_sum, mut kl_sum) = (0.0, 0.0, 0.0);
    let mut clipped = 0usize;
    let mut positions = 0usize;
    let mut ratios = Vec::new();
    let (lo, hi) = (1.0 - cfg.eps_clip, 1.0 + cfg.eps_clip);
    let mut ctx = Vec::with_capacity(group.prefix.len() + cfg.window);

    for (i, window) in group.windows.iter().enumerate() {
        let adv = group.advantages[i];
        let k = window.len();
        let scale = 1.0 / (g as f64 * k as f64);
        ctx.clear();
        ctx.extend_from_slice(&group.prefix);
        for (t, &y) in window.tokens.iter().enumerate() {
            let out = current.forward(&ctx, group.feature.as_ref())?;
            let q = out.dist.as_slice();
            let ratio = (out.dist.log_prob(y) - group.old_logprobs[i][t]).exp();
            ratios.push(ratio);
            let surrogate = (ratio * adv).min(ratio.clamp(lo, hi) * adv);
            // Gradient flows through r only on the unclipped branch.
            let unclipped = (adv > 0.0 && ratio <= hi) || (adv < 0.0 && ratio >= lo);
            if adv != 0.0 && !unclipped {
                clipped += 1;
            }

            let p = target.next_dist(&ctx);
            let log_ratio: Vec<f64> = q
                .iter()
                .zip(p.as_slice())
                .map(|(&qj, &pj)| floored_ln(qj) - floored_ln(pj))
                .collect();
            let kl: f64 = q.iter().zip(&log_ratio).map(|(qj, lr)| qj * lr).sum();

            let mut upstream = vec![0.0; q.len()];
            if unclipped {
                let coef = scale * adv * ratio;
                for (u, d) in upstream.iter_mut().zip(logprob_upstream(&out.dist, y)) {
                    *u += coef * d;
                }
            }
            if cfg.kl_beta != 0.0 {
                let coef = scale * cfg.kl_beta;
                for (j, u) in upstream.iter_mut().enumerate() {
                    *u -= coef * q[j] * (log_ratio[j] - kl);
                }
            }
            current.backward_into(&out, &upstream, &mut grad)?;

            value += scale * (surrogate - cfg.kl_beta * kl);
            surrogate_sum += surrogate;
            kl_sum += kl;
            positions += 1;
            ctx.push(y);
        }
    }
    let n = positions.max(1) as f64;
    Ok(ObjectiveEval {
        value,
        grad,
        surrogate: surrogate_sum / n,
        kl_mean: kl_sum / n,
        clip_fraction: clipped as f64 / n,
        ratios,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepMetrics {
    pub step: usize,
    pub reward_mean: f64,
    pub reward_std: f64,
    pub kl_mean: f64,
    pub clip_fraction: f64,
    pub tau_train: f64,
    pub objective_value: f64,
    pub lr: f64,
    pub window_start: usize,
    pub dist_reward_rate: f64,
}

/// Drafter, frozen target, prompt pool, and step counter for one training arm.
pub struct TrainerState<T: TargetAdapter> {
    pub drafter: DrafterParameters,
    pub target: T,
    pub prompts: Vec<TokenSeq>,
    pub step: usize,
    root: RngStream,
}

impl<T: TargetAdapter> TrainerState<T> {
    pub fn new(drafter: DrafterParameters, target: T, prompts: Vec<TokenSeq>, seed: u64) -> Result<Self> {
        if prompts.is_empty() || prompts.iter().any(|p| p.is_empty()) {
            return Err(Error::InvalidInput("training needs non-empty prompts".into()));
        }
        if drafter.shape().vocab != target.vocab_size() {
            return Err(Error::ShapeMismatch {
                expected: format!("vocab={}", target.vocab_size()),
                found: format!("vocab={}", drafter.shape().vocab),
            });
        }
        Ok(Self {
            drafter,
            target,
            prompts,
            step: 0,
            root: RngStream::new(seed),
        })
    }

    fn sample_response(&self, prompt: &[TokenId], len: usize, rng: &mut RngStream) -> TokenSeq {
        let mut seq = prompt.to_vec();
        for _ in 0..len {
            let y = rng.categorical(&self.target.next_dist(&seq));
            seq.push(y);
        }
        seq
    }
}

/// One policy-optimization step. Randomness for step `s` comes from
/// `RngStream::new(seed).child("ppow").child_idx("step", s)`.
pub fn train_step<T: TargetAdapter>(state: &mut TrainerState<T>, cfg: &TrainConfig) -> Result<StepMetrics> {
    let rng = state.root.child("ppow").child_idx("step", state.step as u64);
    let prompt = &state.prompts[rng.child("prompt").below(state.prompts.len())];
    let seq = state.sample_response(prompt, cfg.response_len, &mut rng.child("response"));

    let profile = criticality_profile_from(&state.target, &state.drafter, &seq, prompt.len());
    let scores = window_scores(&profile, cfg.window)?;
    let progress = if cfg.total_steps > 0 {
        state.step as f64 / cfg.total_steps as f64
    } else {
        1.0
    };
    let mut start_rng = rng.child("start");
    let start = if cfg.adaw {
        sample_window_start(&scores, progress, &cfg.curriculum, &mut start_rng)
    } else {
        start_rng.below(scores.s.len())
    };
    let prefix = &seq[..prompt.len() + start];

    let snapshot = state.drafter.clone();
    let group = collect_rollout_group(&snapshot, &state.target, prefix, cfg, &rng.child("rollout"))?;
    let lr = cfg.schedule().lr_at(state.step);
    let mut first = None;
    let mut clip_fraction = 0.0;
    for _ in 0..cfg.inner_epochs {
        let eval = ppow_objective(&group, &state.drafter, &state.target, cfg)?;
        clip_fraction = eval.clip_fraction;
        if lr != 0.0 {
            state.drafter.axpy(lr, &eval.grad);
        }
        first.get_or_insert((eval.value, eval.kl_mean));
    }
    let (objective_value, kl_mean) = first.expect("inner_epochs ≥ 1");

    let totals: Vec<f64> = group.rewards.iter().map(|r| r.total).collect();
    let n = totals.len() as f64;
    let reward_mean = totals.iter().sum::<f64>() / n;
    let reward_std = (totals.iter().map(|r| (r - reward_mean).powi(2)).sum::<f64>() / n).sqrt();
    let metrics = StepMetrics {
        step: state.step,
        reward_mean,
        reward_std,
        kl_mean,
        clip_fraction,
        tau_train: group.outcomes.iter().map(|o| o.accepted_len as f64).sum::<f64>() / n,
        objective_value,
        lr,
        window_start: start,
        dist_reward_rate: group.rewards.iter().filter(|r| r.r_dist > 0.0).count() as f64 / n,
    };
    state.step += 1;
    Ok(metrics)
}

/// One continued-supervised step: a cross-entropy update on a target-sampled
/// token after a prompt extended by a random-length target continuation, the
/// same context distribution [`train_step`] draws windows from. Returns the
/// loss before the update.
pub fn cst_step<T: TargetAdapter>(state: &mut TrainerState<T>, cfg: &TrainConfig) -> Result<f64> {
    let (prefix, token) = cst_pair(state, cfg);
    let feature = drafter_feature(&state.drafter, &state.target, &prefix);
    let lr = cfg.schedule().lr_at(state.step);
    let loss = sft_step(&mut state.drafter, &prefix, token, feature.as_ref(), lr)?;
    state.step += 1;
    Ok(loss)
}

/// The `(prefix, token)` pair [`cst_step`] will train on next.
pub fn cst_pair<T: TargetAdapter>(state: &TrainerState<T>, cfg: &TrainConfig) -> (TokenSeq, TokenId) {
    let rng = state.root.child("cst").child_idx("step", state.step as u64);
    let prompt = &state.prompts[rng.child("prompt").below(state.prompts.len())];
    let len = rng.child("len").below(cfg.response_len + 1);
    let prefix = state.sample_response(prompt, len, &mut rng.child("response"));
    let token = rng.child("token").categorical(&state.target.next_dist(&prefix));
    (prefix, token)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_prompt: Vec<DecodeStats>,
    pub aggregate: DecodeStats,
}

/// Decodes `max_tokens` from every prompt and pools the statistics. Prompt
/// `i` uses `rng.child_idx("prompt", i)`.
pub fn evaluate<D, T>(drafter: &D, target: &T, prompts: &[TokenSeq], decode: &DecodeConfig, max_tokens: usize, rng: &RngStream) -> Result<EvalReport>
where
    D: DraftPolicy + ?Sized,
    T: TargetAdapter + ?Sized,
{
    if prompts.is_empty() {
        return Err(Error::InvalidInput("evaluation needs at least one prompt".into()));
    }
    let per_prompt = prompts
        .iter()
        .enumerate()
        .map(|(i, p)| generate(drafter, target, p, max_tokens, decode, &rng.child_idx("prompt", i as u64)).map(|(_, s)| s))
        .collect::<Result<Vec<_>>>()?;
    let aggregate = DecodeStats::pooled(&per_prompt, decode, rng.seed());
    Ok(EvalReport { per_prompt, aggregate })
}
