//! Flat `key = value` run configuration.
//!
//! One assignment per line, `#` starts a comment, lists are comma-separated.
//! Every key is known up front; anything else is rejected before a command
//! touches the filesystem.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use ppow_core::adaw::{CurriculumSchedule, SelectionMode};
use ppow_core::models::DrafterShape;
use ppow_core::rewards::RewardConfig;
use ppow_core::specdec::DecodeConfig;
use ppow_core::trainer::TrainConfig;

use crate::pipeline::TaskSpec;
use crate::CliError;

/// Which update rule `train-ppow` applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainArm {
    Ppow,
    Cst,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // policy optimization
    pub eps_clip: f64,
    pub kl_beta: f64,
    pub group_size: usize,
    pub window: usize,
    pub lr: f64,
    pub warmup_ratio: f64,
    pub adv_delta: f64,
    pub total_steps: usize,
    pub inner_epochs: usize,
    pub response_len: usize,
    pub train_arm: TrainArm,
    // rewards
    pub gamma: f64,
    pub epsilon: f64,
    pub eta: f64,
    pub always_compute_delta: bool,
    // window selection
    pub adaw: bool,
    pub curriculum: Vec<(f64, f64)>,
    pub selection: SelectionMode,
    // drafter
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub context_len: usize,
    pub hidden_dim: usize,
    pub use_feature: bool,
    // data and target
    pub corpus_path: Option<PathBuf>,
    pub grammar_path: Option<PathBuf>,
    pub prompts_path: Option<PathBuf>,
    pub corpus_sequences: usize,
    pub corpus_length: usize,
    pub prompt_len: usize,
    pub eval_prompts: usize,
    pub target_order: usize,
    pub smoothing: f64,
    // supervised pretraining
    pub sft_steps: usize,
    pub sft_lr: f64,
    pub sft_warmup_ratio: f64,
    // evaluation
    pub eval_k: Vec<usize>,
    pub eval_candidates: Vec<usize>,
    pub eval_temperatures: Vec<f64>,
    pub eval_max_tokens: usize,
    pub eval_every: usize,
    // analysis
    pub analysis_pairs: usize,
    pub analysis_vocab_sizes: Vec<usize>,
    pub mc_trials: usize,
    pub reward_gammas: Vec<f64>,
    pub reward_ks: Vec<usize>,
    pub draft_token_cost: f64,
    pub verify_cost: f64,
    pub step_overhead: f64,
    // output
    pub out_dir: PathBuf,
    pub log_every: usize,
    pub checkpoint_every: usize,
    pub plot_ready: bool,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let reward = RewardConfig::default();
        Self {
            eps_clip: train.eps_clip,
            kl_beta: train.kl_beta,
            group_size: train.group_size,
            window: train.window,
            lr: train.lr,
            warmup_ratio: train.warmup_ratio,
            adv_delta: train.adv_delta,
            total_steps: train.total_steps,
            inner_epochs: train.inner_epochs,
            response_len: train.response_len,
            train_arm: TrainArm::Ppow,
            gamma: reward.gamma,
            epsilon: reward.epsilon,
            eta: reward.eta,
            always_compute_delta: reward.always_compute_delta,
            adaw: train.adaw,
            curriculum: train.curriculum.points().to_vec(),
            selection: SelectionMode::Proportional,
            vocab_size: 16,
            embed_dim: 8,
            context_len: 2,
            hidden_dim: 32,
            use_feature: false,
            corpus_path: None,
            grammar_path: None,
            prompts_path: None,
            corpus_sequences: 1000,
            corpus_length: 64,
            prompt_len: 4,
            eval_prompts: 64,
            target_order: 2,
            smoothing: 0.01,
            sft_steps: 20_000,
            sft_lr: 0.1,
            sft_warmup_ratio: 0.05,
            eval_k: vec![10],
            eval_candidates: vec![1],
            eval_temperatures: vec![1.0],
            eval_max_tokens: 200,
            eval_every: 1000,
            analysis_pairs: 100_000,
            analysis_vocab_sizes: vec![2, 8, 64],
            mc_trials: 100_000,
            reward_gammas: vec![0.125, 0.12],
            reward_ks: (0..=7).collect(),
            draft_token_cost: 0.2,
            verify_cost: 1.0,
            step_overhead: 0.05,
            out_dir: PathBuf::from("runs/default"),
            log_every: 1,
            checkpoint_every: 0,
            plot_ready: false,
            seed: 0,
        }
    }
}

fn parse_scalar<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("{key}: cannot parse {value:?}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(format!("{key}: expected a boolean, got {value:?}")),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_scalar(key, s))
        .collect()
}

fn parse_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

/// `progress:mix` pairs, e.g. `0:0.2, 0.333:0.4, 0.667:0.6`.
fn parse_curriculum(key: &str, value: &str) -> Result<Vec<(f64, f64)>, String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let (a, b) = item
                .split_once(':')
                .ok_or_else(|| format!("{key}: expected progress:mix, got {item:?}"))?;
            Ok((parse_scalar(key, a.trim())?, parse_scalar(key, b.trim())?))
        })
        .collect()
}

/// `proportional` or `top:<fraction>`.
fn parse_selection(key: &str, value: &str) -> Result<SelectionMode, String> {
    match value.split_once(':') {
        None if value == "proportional" => Ok(SelectionMode::Proportional),
        Some(("top", f)) => Ok(SelectionMode::TopQuantile(parse_scalar(key, f.trim())?)),
        _ => Err(format!("{key}: expected `proportional` or `top:<fraction>`, got {value:?}")),
    }
}

impl RunConfig {
    /// Assigns one key. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "eps_clip" => self.eps_clip = parse_scalar(key, value)?,
            "kl_beta" => self.kl_beta = parse_scalar(key, value)?,
            "group_size" => self.group_size = parse_scalar(key, value)?,
            "window" => self.window = parse_scalar(key, value)?,
            "lr" => self.lr = parse_scalar(key, value)?,
            "warmup_ratio" => self.warmup_ratio = parse_scalar(key, value)?,
            "adv_delta" => self.adv_delta = parse_scalar(key, value)?,
            "total_steps" => self.total_steps = parse_scalar(key, value)?,
            "inner_epochs" => self.inner_epochs = parse_scalar(key, value)?,
            "response_len" => self.response_len = parse_scalar(key, value)?,
            "train_arm" => {
                self.train_arm = match value {
                    "ppow" => TrainArm::Ppow,
                    "cst" => TrainArm::Cst,
                    _ => return Err(format!("{key}: expected `ppow` or `cst`, got {value:?}")),
                }
            }
            "gamma" => self.gamma = parse_scalar(key, value)?,
            "epsilon" => self.epsilon = parse_scalar(key, value)?,
            "eta" => self.eta = parse_scalar(key, value)?,
            "always_compute_delta" => self.always_compute_delta = parse_bool(key, value)?,
            "adaw" => self.adaw = parse_bool(key, value)?,
            "curriculum" => self.curriculum = parse_curriculum(key, value)?,
            "selection" => self.selection = parse_selection(key, value)?,
            "vocab_size" => self.vocab_size = parse_scalar(key, value)?,
            "embed_dim" => self.embed_dim = parse_scalar(key, value)?,
            "context_len" => self.context_len = parse_scalar(key, value)?,
            "hidden_dim" => self.hidden_dim = parse_scalar(key, value)?,
            "use_feature" => self.use_feature = parse_bool(key, value)?,
            "corpus_path" => self.corpus_path = parse_path(value),
            "grammar_path" => self.grammar_path = parse_path(value),
            "prompts_path" => self.prompts_path = parse_path(value),
            "corpus_sequences" => self.corpus_sequences = parse_scalar(key, value)?,
            "corpus_length" => self.corpus_length = parse_scalar(key, value)?,
            "prompt_len" => self.prompt_len = parse_scalar(key, value)?,
            "eval_prompts" => self.eval_prompts = parse_scalar(key, value)?,
            "target_order" => self.target_order = parse_scalar(key, value)?,
            "smoothing" => self.smoothing = parse_scalar(key, value)?,
            "sft_steps" => self.sft_steps = parse_scalar(key, value)?,
            "sft_lr" => self.sft_lr = parse_scalar(key, value)?,
            "sft_warmup_ratio" => self.sft_warmup_ratio = parse_scalar(key, value)?,
            "eval_k" => self.eval_k = parse_list(key, value)?,
            "eval_candidates" => self.eval_candidates = parse_list(key, value)?,
            "eval_temperatures" => self.eval_temperatures = parse_list(key, value)?,
            "eval_max_tokens" => self.eval_max_tokens = parse_scalar(key, value)?,
            "eval_every" => self.eval_every = parse_scalar(key, value)?,
            "analysis_pairs" => self.analysis_pairs = parse_scalar(key, value)?,
            "analysis_vocab_sizes" => self.analysis_vocab_sizes = parse_list(key, value)?,
            "mc_trials" => self.mc_trials = parse_scalar(key, value)?,
            "reward_gammas" => self.reward_gammas = parse_list(key, value)?,
            "reward_ks" => self.reward_ks = parse_list(key, value)?,
            "draft_token_cost" => self.draft_token_cost = parse_scalar(key, value)?,
            "verify_cost" => self.verify_cost = parse_scalar(key, value)?,
            "step_overhead" => self.step_overhead = parse_scalar(key, value)?,
            "out_dir" => {
                self.out_dir = parse_path(value).ok_or_else(|| format!("{key}: must not be empty"))?
            }
            "log_every" => self.log_every = parse_scalar(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse_scalar(key, value)?,
            "plot_ready" => self.plot_ready = parse_bool(key, value)?,
            "seed" => self.seed = parse_scalar(key, value)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Parses config text on top of the defaults. Relative paths are resolved
    /// against `base` when given.
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| CliError::Config(format!("line {}: {message}", i + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got {line:?}")))?;
            cfg.set(key.trim(), value.trim()).map_err(err)?;
        }
        if let Some(base) = base {
            for p in [&mut cfg.corpus_path, &mut cfg.grammar_path, &mut cfg.prompts_path]
                .into_iter()
                .flatten()
            {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, path.parent())
    }

    /// Checks every cross-key constraint except the data source. Runs before
    /// any side effect.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        self.curriculum_schedule()?;
        self.train_config().validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.shape().validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.target_order == 0 {
            return bad("target_order must be ≥ 1");
        }
        if self.smoothing.is_nan() || self.smoothing < 0.0 {
            return bad("smoothing must be ≥ 0");
        }
        if self.prompt_len == 0 || self.eval_prompts == 0 {
            return bad("prompt_len and eval_prompts must be ≥ 1");
        }
        if self.grammar_path.is_some() && (self.corpus_sequences == 0 || self.corpus_length < 2) {
            return bad("corpus_sequences must be ≥ 1 and corpus_length ≥ 2");
        }
        if self.sft_lr.is_nan() || self.sft_lr < 0.0 || !(0.0..=1.0).contains(&self.sft_warmup_ratio) {
            return bad("sft_lr must be ≥ 0 and sft_warmup_ratio in [0, 1]");
        }
        if self.eval_k.is_empty() || self.eval_candidates.is_empty() || self.eval_temperatures.is_empty() {
            return bad("eval_k, eval_candidates and eval_temperatures must be non-empty");
        }
        if self.eval_k.contains(&0) || self.eval_candidates.contains(&0) {
            return bad("eval_k and eval_candidates entries must be ≥ 1");
        }
        if self.eval_temperatures.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return bad("eval_temperatures must be finite and ≥ 0");
        }
        if self.eval_max_tokens == 0 {
            return bad("eval_max_tokens must be ≥ 1");
        }
        if self.analysis_vocab_sizes.iter().any(|&n| n < 2) || self.analysis_vocab_sizes.is_empty() {
            return bad("analysis_vocab_sizes entries must be ≥ 2");
        }
        if self.reward_gammas.is_empty() || self.reward_ks.is_empty() {
            return bad("reward_gammas and reward_ks must be non-empty");
        }
        if self.log_every == 0 {
            return bad("log_every must be ≥ 1");
        }
        Ok(())
    }

    /// [`RunConfig::validate`] plus the data-source keys, for commands that
    /// build a task.
    pub fn validate_with_task(&self) -> Result<(), CliError> {
        self.validate()?;
        if self.corpus_path.is_some() == self.grammar_path.is_some() {
            return Err(CliError::Config("set exactly one of corpus_path and grammar_path".into()));
        }
        Ok(())
    }

    pub fn reward_config(&self) -> RewardConfig {
        RewardConfig {
            gamma: self.gamma,
            epsilon: self.epsilon,
            eta: self.eta,
            always_compute_delta: self.always_compute_delta,
        }
    }

    pub fn curriculum_schedule(&self) -> Result<CurriculumSchedule, CliError> {
        CurriculumSchedule::new(self.curriculum.clone(), self.selection).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            eps_clip: self.eps_clip,
            kl_beta: self.kl_beta,
            group_size: self.group_size,
            window: self.window,
            reward: self.reward_config(),
            lr: self.lr,
            warmup_ratio: self.warmup_ratio,
            adv_delta: self.adv_delta,
            total_steps: self.total_steps,
            curriculum: self
                .curriculum_schedule()
                .unwrap_or_else(|_| CurriculumSchedule::constant(f64::NAN)),
            adaw: self.adaw,
            inner_epochs: self.inner_epochs,
            response_len: self.response_len,
            seed: self.seed,
        }
    }

    pub fn shape(&self) -> DrafterShape {
        DrafterShape {
            vocab: self.vocab_size,
            embed: self.embed_dim,
            feature: if self.use_feature {
                self.target_order.saturating_sub(1) * self.vocab_size
            } else {
                0
            },
            context: self.context_len,
            hidden: self.hidden_dim,
        }
    }

    pub fn task_spec(&self) -> TaskSpec {
        TaskSpec {
            vocab_size: self.vocab_size,
            target_order: self.target_order,
            smoothing: self.smoothing,
            corpus_sequences: self.corpus_sequences,
            corpus_length: self.corpus_length,
            prompt_len: self.prompt_len,
            eval_prompts: self.eval_prompts,
        }
    }

    /// Every `(K, G, temperature)` combination, in list order.
    pub fn eval_sweep(&self) -> Vec<DecodeConfig> {
        let mut out = Vec::new();
        for &k in &self.eval_k {
            for &candidates in &self.eval_candidates {
                for &temperature in &self.eval_temperatures {
                    out.push(DecodeConfig {
                        k,
                        candidates,
                        temperature,
                        gamma: self.gamma,
                    });
                }
            }
        }
        out
    }

    /// `key = value` lines reproducing this config, used as checkpoint echo.
    pub fn echo(&self) -> Vec<String> {
        let list = |v: &[String]| v.join(",");
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let nums = |v: &[usize]| list(&v.iter().map(|x| x.to_string()).collect::<Vec<_>>());
        let floats = |v: &[f64]| list(&v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>());
        vec![
            format!("eps_clip = {:?}", self.eps_clip),
            format!("kl_beta = {:?}", self.kl_beta),
            format!("group_size = {}", self.group_size),
            format!("window = {}", self.window),
            format!("lr = {:?}", self.lr),
            format!("warmup_ratio = {:?}", self.warmup_ratio),
            format!("adv_delta = {:?}", self.adv_delta),
            format!("total_steps = {}", self.total_steps),
            format!("inner_epochs = {}", self.inner_epochs),
            format!("response_len = {}", self.response_len),
            format!("train_arm = {}", if self.train_arm == TrainArm::Ppow { "ppow" } else { "cst" }),
            format!("gamma = {:?}", self.gamma),
            format!("epsilon = {:?}", self.epsilon),
            format!("eta = {:?}", self.eta),
            format!("always_compute_delta = {}", self.always_compute_delta),
            format!("adaw = {}", self.adaw),
            format!(
                "curriculum = {}",
                list(&self.curriculum.iter().map(|(a, b)| format!("{a:?}:{b:?}")).collect::<Vec<_>>())
            ),
            format!(
                "selection = {}",
                match self.selection {
                    SelectionMode::Proportional => "proportional".to_string(),
                    SelectionMode::TopQuantile(f) => format!("top:{f:?}"),
                }
            ),
            format!("vocab_size = {}", self.vocab_size),
            format!("embed_dim = {}", self.embed_dim),
            format!("context_len = {}", self.context_len),
            format!("hidden_dim = {}", self.hidden_dim),
            format!("use_feature = {}", self.use_feature),
            format!("corpus_path = {}", path(&self.corpus_path)),
            format!("grammar_path = {}", path(&self.grammar_path)),
            format!("prompts_path = {}", path(&self.prompts_path)),
            format!("corpus_sequences = {}", self.corpus_sequences),
            format!("corpus_length = {}", self.corpus_length),
            format!("prompt_len = {}", self.prompt_len),
            format!("eval_prompts = {}", self.eval_prompts),
            format!("target_order = {}", self.target_order),
            format!("smoothing = {:?}", self.smoothing),
            format!("sft_steps = {}", self.sft_steps),
            format!("sft_lr = {:?}", self.sft_lr),
            format!("sft_warmup_ratio = {:?}", self.sft_warmup_ratio),
            format!("eval_k = {}", nums(&self.eval_k)),
            format!("eval_candidates = {}", nums(&self.eval_candidates)),
            format!("eval_temperatures = {}", floats(&self.eval_temperatures)),
            format!("eval_max_tokens = {}", self.eval_max_tokens),
            format!("eval_every = {}", self.eval_every),
            format!("analysis_pairs = {}", self.analysis_pairs),
            format!("analysis_vocab_sizes = {}", nums(&self.analysis_vocab_sizes)),
            format!("mc_trials = {}", self.mc_trials),
            format!("reward_gammas = {}", floats(&self.reward_gammas)),
            format!("reward_ks = {}", nums(&self.reward_ks)),
            format!("draft_token_cost = {:?}", self.draft_token_cost),
            format!("verify_cost = {:?}", self.verify_cost),
            format!("step_overhead = {:?}", self.step_overhead),
            format!("out_dir = {}", self.out_dir.display()),
            format!("log_every = {}", self.log_every),
            format!("checkpoint_every = {}", self.checkpoint_every),
            format!("plot_ready = {}", self.plot_ready),
            format!("seed = {}", self.seed),
        ]
    }
}
