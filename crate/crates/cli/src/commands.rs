//! The four subcommands. Each is a pure function of the config, seed, and
//! input files; only `wall_time` fields vary between reruns.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use serde_json::{json, Value};

use ppow_core::analysis::{
    acceptance_probability, easy_hard_partition, monte_carlo_acceptance, nabla_metric, pinsker_sweep,
    reward_table_compare, DistPair, SyntheticCostModel, REFERENCE_COST_AWARE_REWARDS,
};
use ppow_core::corpus::{read_corpus, GrammarSpec};
use ppow_core::models::{checkpoint_load, checkpoint_save, TabularTarget, WarmupSchedule};
use ppow_core::specdec::{DecodeConfig, DecodeStats};
use ppow_core::trainer::{cst_step, evaluate, train_step, TrainerState};
use ppow_core::{DrafterParameters, ProbVector, RngStream, TokenSeq};

use crate::config::{RunConfig, TrainArm};
use crate::output::{write_plot, MetricsLog, OutputLock};
use crate::pipeline::{build_task, sft_pretrain, Task, TaskSource};
use crate::CliError;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const PRETRAIN_CHECKPOINT: &str = "pretrain.ckpt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const EVAL_TABLE: &str = "eval.tsv";

/// Reads the data source named by the config and assembles the task.
pub fn load_task(cfg: &RunConfig) -> Result<Task, CliError> {
    let read = |p: &Path| {
        read_corpus(p, cfg.vocab_size)
            .map_err(|e| CliError::Runtime(format!("cannot read corpus {}: {e}", p.display())))
    };
    let source = match (&cfg.grammar_path, &cfg.corpus_path) {
        (Some(g), None) => TaskSource::Grammar(
            GrammarSpec::load(g).map_err(|e| CliError::Runtime(format!("cannot read grammar {}: {e}", g.display())))?,
        ),
        (None, Some(c)) => TaskSource::Corpus {
            corpus: read(c)?,
            eval_prompts: None,
        },
        _ => return Err(CliError::Config("set exactly one of corpus_path and grammar_path".into())),
    };
    let mut task = build_task(&source, &cfg.task_spec(), cfg.seed)?;
    if let Some(p) = &cfg.prompts_path {
        task.eval_prompts = read(p)?;
        if task.eval_prompts.is_empty() || task.eval_prompts.iter().any(|p| p.is_empty()) {
            return Err(CliError::Runtime(format!("prompts file {} has empty entries", p.display())));
        }
    }
    Ok(task)
}

fn eval_stream(cfg: &RunConfig) -> RngStream {
    RngStream::new(cfg.seed).child("eval")
}

fn eval_point(
    drafter: &DrafterParameters,
    target: &TabularTarget,
    prompts: &[TokenSeq],
    decode: &DecodeConfig,
    cfg: &RunConfig,
) -> Result<DecodeStats, CliError> {
    Ok(evaluate(drafter, target, prompts, decode, cfg.eval_max_tokens, &eval_stream(cfg))?.aggregate)
}

#[derive(Serialize)]
struct EvalRecord<'a> {
    step: usize,
    #[serde(flatten)]
    stats: &'a DecodeStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainSummary {
    pub checkpoint: PathBuf,
    pub tau_init: f64,
    pub tau_final: f64,
}

pub fn cmd_pretrain(cfg: &RunConfig) -> Result<PretrainSummary, CliError> {
    cfg.validate_with_task()?;
    let task = load_task(cfg)?;
    let _lock = OutputLock::acquire(&cfg.out_dir)?;
    let mut log = MetricsLog::create(&cfg.out_dir.join(METRICS_FILE))?;
    let decode = cfg.eval_sweep()[0];

    let mut drafter = DrafterParameters::init(cfg.shape(), cfg.seed)?;
    let init_stats = eval_point(&drafter, &task.target, &task.eval_prompts, &decode, cfg)?;
    log.record("eval", &EvalRecord { step: 0, stats: &init_stats })?;

    let schedule = WarmupSchedule::from_ratio(cfg.sft_lr, cfg.sft_warmup_ratio, cfg.sft_steps);
    let losses = sft_pretrain(&mut drafter, &task.target, &task.corpus, cfg.sft_steps, &schedule, cfg.seed)?;
    let mut plot = Vec::new();
    for (i, chunk) in losses.chunks(cfg.log_every).enumerate() {
        let step = i * cfg.log_every;
        let loss = chunk.iter().sum::<f64>() / chunk.len() as f64;
        log.record("sft", &json!({"step": step, "loss": loss, "lr": schedule.lr_at(step)}))?;
        plot.push((step as f64, loss));
    }

    let final_stats = eval_point(&drafter, &task.target, &task.eval_prompts, &decode, cfg)?;
    log.record("eval", &EvalRecord { step: cfg.sft_steps, stats: &final_stats })?;
    log.flush()?;
    let checkpoint = cfg.out_dir.join(PRETRAIN_CHECKPOINT);
    checkpoint_save(&drafter, &checkpoint, &cfg.echo())?;
    if cfg.plot_ready {
        write_plot(&cfg.out_dir.join("sft_loss.dat"), plot)?;
    }
    log::info!("pretrain: tau {:.3} -> {:.3}", init_stats.tau, final_stats.tau);
    Ok(PretrainSummary {
        checkpoint,
        tau_init: init_stats.tau,
        tau_final: final_stats.tau,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub tau_init: f64,
    pub tau_final: f64,
}

fn load_drafter(cfg: &RunConfig, init: &Path) -> Result<DrafterParameters, CliError> {
    Ok(checkpoint_load(init, Some(cfg.shape()))?)
}

pub fn cmd_train_ppow(cfg: &RunConfig, init: &Path) -> Result<TrainSummary, CliError> {
    cfg.validate_with_task()?;
    let task = load_task(cfg)?;
    let drafter = load_drafter(cfg, init)?;
    let train_cfg = cfg.train_config();
    let _lock = OutputLock::acquire(&cfg.out_dir)?;
    let mut log = MetricsLog::create(&cfg.out_dir.join(METRICS_FILE))?;
    let decode = cfg.eval_sweep()[0];

    let mut state = TrainerState::new(drafter, task.target.clone(), task.train_prompts.clone(), cfg.seed)?;
    let tau_init = eval_point(&state.drafter, &task.target, &task.eval_prompts, &decode, cfg)?;
    log.record("eval", &EvalRecord { step: 0, stats: &tau_init })?;
    let mut tau_final = tau_init.clone();
    let (mut reward_plot, mut tau_plot) = (Vec::new(), vec![(0.0, tau_init.tau)]);

    for step in 0..cfg.total_steps {
        match cfg.train_arm {
            TrainArm::Ppow => {
                let m = train_step(&mut state, &train_cfg)?;
                if step % cfg.log_every == 0 {
                    log.record("train", &m)?;
                    reward_plot.push((step as f64, m.reward_mean));
                }
            }
            TrainArm::Cst => {
                let lr = train_cfg.schedule().lr_at(step);
                let loss = cst_step(&mut state, &train_cfg)?;
                if step % cfg.log_every == 0 {
                    log.record("cst", &json!({"step": step, "loss": loss, "lr": lr}))?;
                }
            }
        }
        let done = step + 1;
        if !state.drafter.is_finite() {
            return Err(CliError::Runtime(format!("drafter parameters diverged at step {done}")));
        }
        if done == cfg.total_steps || (cfg.eval_every > 0 && done % cfg.eval_every == 0) {
            let stats = eval_point(&state.drafter, &task.target, &task.eval_prompts, &decode, cfg)?;
            log.record("eval", &EvalRecord { step: done, stats: &stats })?;
            tau_plot.push((done as f64, stats.tau));
            tau_final = stats;
        }
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done != cfg.total_steps {
            checkpoint_save(&state.drafter, &cfg.out_dir.join(format!("step-{done}.ckpt")), &cfg.echo())?;
        }
    }
    log.flush()?;
    let checkpoint = cfg.out_dir.join(FINAL_CHECKPOINT);
    checkpoint_save(&state.drafter, &checkpoint, &cfg.echo())?;
    if cfg.plot_ready {
        write_plot(&cfg.out_dir.join("train_reward.dat"), reward_plot)?;
        write_plot(&cfg.out_dir.join("eval_tau.dat"), tau_plot)?;
    }
    log::info!("train-ppow: tau {:.3} -> {:.3}", tau_init.tau, tau_final.tau);
    Ok(TrainSummary {
        checkpoint,
        tau_init: tau_init.tau,
        tau_final: tau_final.tau,
    })
}

/// One row per sweep point, in sweep order.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path) -> Result<Vec<DecodeStats>, CliError> {
    cfg.validate_with_task()?;
    let task = load_task(cfg)?;
    let drafter = load_drafter(cfg, checkpoint)?;
    let _lock = OutputLock::acquire(&cfg.out_dir)?;
    let mut log = MetricsLog::create(&cfg.out_dir.join(METRICS_FILE))?;
    let mut rows = Vec::new();
    for decode in cfg.eval_sweep() {
        let stats = eval_point(&drafter, &task.target, &task.eval_prompts, &decode, cfg)?;
        log.record("eval", &stats)?;
        rows.push(stats);
    }
    log.flush()?;
    std::fs::write(cfg.out_dir.join(EVAL_TABLE), eval_table(&rows))?;
    if cfg.plot_ready {
        write_plot(
            &cfg.out_dir.join("eval_tau_by_G.dat"),
            rows.iter().map(|r| (r.candidates as f64, r.tau)),
        )?;
    }
    Ok(rows)
}

pub fn eval_table(rows: &[DecodeStats]) -> String {
    let mut s = String::from("K\tG\ttemperature\ttau\tspeedup\ttokens\tsteps\n");
    for r in rows {
        s.push_str(&format!(
            "{}\t{}\t{}\t{:.4}\t{:.4}\t{}\t{}\n",
            r.k, r.candidates, r.temperature, r.tau, r.speedup_cost_model, r.total_tokens, r.num_steps
        ));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Pinsker,
    RewardTable,
    Nabla,
    EasyHard,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Pinsker => "pinsker",
            Suite::RewardTable => "reward-table",
            Suite::Nabla => "nabla",
            Suite::EasyHard => "easy-hard",
        }
    }
}

impl FromStr for Suite {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "pinsker" => Ok(Suite::Pinsker),
            "reward-table" => Ok(Suite::RewardTable),
            "nabla" => Ok(Suite::Nabla),
            "easy-hard" => Ok(Suite::EasyHard),
            _ => Err(CliError::Usage(format!(
                "unknown suite {s:?} (expected pinsker, reward-table, nabla or easy-hard)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub suite: String,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub details: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
}

fn check(checks: &mut Vec<Check>, name: impl Into<String>, passed: bool) {
    checks.push(Check {
        name: name.into(),
        passed,
    });
}

/// Report path for a suite inside the output directory.
pub fn report_path(cfg: &RunConfig, suite: Suite) -> PathBuf {
    cfg.out_dir.join(format!("analyze-{}.json", suite.name()))
}

pub fn cmd_analyze(cfg: &RunConfig, suite: Suite, init: Option<&Path>) -> Result<AnalysisReport, CliError> {
    cfg.validate()?;
    let easy_hard_inputs = if suite == Suite::EasyHard {
        cfg.validate_with_task()?;
        let init = init.ok_or_else(|| CliError::Usage("easy-hard needs --init CKPT".into()))?;
        Some((load_task(cfg)?, load_drafter(cfg, init)?))
    } else {
        None
    };
    let _lock = OutputLock::acquire(&cfg.out_dir)?;
    let mut log = MetricsLog::create(&cfg.out_dir.join(METRICS_FILE))?;
    let root = RngStream::new(cfg.seed).child("analyze").child(suite.name());
    let mut checks = Vec::new();
    let details = match suite {
        Suite::Pinsker => analyze_pinsker(cfg, &root, &mut log, &mut checks)?,
        Suite::RewardTable => analyze_reward_table(cfg, &mut log, &mut checks)?,
        Suite::Nabla => analyze_nabla(&mut log, &mut checks)?,
        Suite::EasyHard => {
            let (task, drafter) = easy_hard_inputs.expect("loaded above");
            let report = easy_hard_partition(&drafter, &task.target, &task.eval_prompts, cfg.window, &root)?;
            for (name, set) in [("easy", &report.easy), ("hard", &report.hard)] {
                let mean_k = if set.accepted.is_empty() {
                    0.0
                } else {
                    set.accepted.iter().sum::<usize>() as f64 / set.accepted.len() as f64
                };
                check(&mut checks, format!("{name} tau equals member mean k"), set.tau == mean_k);
                log.record(name, &json!({"windows": set.indices.len(), "tau": set.tau, "nabla_mean": set.nabla_mean}))?;
            }
            check(
                &mut checks,
                "easy windows fully accepted",
                report.easy.accepted.iter().all(|&k| k == cfg.window),
            );
            serde_json::to_value(&report).map_err(|e| CliError::Runtime(e.to_string()))?
        }
    };
    log.flush()?;
    let report = AnalysisReport {
        suite: suite.name().to_string(),
        passed: checks.iter().all(|c| c.passed),
        checks,
        details,
    };
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))?;
    std::fs::write(report_path(cfg, suite), text + "\n")?;
    Ok(report)
}

fn analyze_pinsker(cfg: &RunConfig, root: &RngStream, log: &mut MetricsLog, checks: &mut Vec<Check>) -> Result<Value, CliError> {
    let mut sweeps = Vec::new();
    for &n in &cfg.analysis_vocab_sizes {
        let sweep = pinsker_sweep(n, cfg.analysis_pairs, &mut root.child_idx("sweep", n as u64));
        check(checks, format!("|V|={n}: no bound violations"), sweep.violations == 0);
        check(checks, format!("|V|={n}: alpha = 1 - TV within 1e-12"), sweep.max_identity_error <= 1e-12);
        log.record("sweep", &sweep)?;

        let mut rng = root.child_idx("mc", n as u64);
        let pair = DistPair::random(n, &mut rng);
        let exact = acceptance_probability(&pair);
        let empirical = monte_carlo_acceptance(&pair, cfg.mc_trials, &mut rng);
        let sigma = (exact * (1.0 - exact) / cfg.mc_trials as f64).sqrt();
        let ok = (empirical - exact).abs() <= 3.0 * sigma;
        check(checks, format!("|V|={n}: Monte Carlo acceptance within 3 sigma"), ok);
        log.record("monte_carlo", &json!({"vocab_size": n, "exact": exact, "empirical": empirical, "sigma": sigma}))?;
        sweeps.push(json!({"sweep": sweep, "mc_exact": exact, "mc_empirical": empirical, "mc_sigma": sigma}));
    }
    let pair = DistPair::new(ProbVector::new(vec![0.9, 0.1])?, ProbVector::new(vec![0.6, 0.4])?)?;
    let empirical = monte_carlo_acceptance(&pair, cfg.mc_trials, &mut root.child("worked-example"));
    let sigma = (0.7f64 * 0.3 / cfg.mc_trials as f64).sqrt();
    check(checks, "worked example (0.9,0.1) vs (0.6,0.4) within 3 sigma of 0.7", (empirical - 0.7).abs() <= 3.0 * sigma);
    Ok(json!({"pairs_per_size": cfg.analysis_pairs, "sizes": sweeps, "worked_example_empirical": empirical}))
}

fn analyze_reward_table(cfg: &RunConfig, log: &mut MetricsLog, checks: &mut Vec<Check>) -> Result<Value, CliError> {
    let cost = SyntheticCostModel {
        draft_token_cost: cfg.draft_token_cost,
        verify_cost: cfg.verify_cost,
        step_overhead: cfg.step_overhead,
    };
    let tables = reward_table_compare(&cfg.reward_gammas, &cfg.reward_ks, &cost)?;
    let mut tsv = String::new();
    for table in &tables {
        check(checks, format!("gamma={}: columns share ordering over k", table.gamma), table.same_ordering);
        check(checks, format!("gamma={}: both columns monotone in k", table.gamma), table.measured_monotone && table.cost_aware_monotone);
        if (table.gamma - 0.125).abs() < 1e-15 {
            for (k, reference) in REFERENCE_COST_AWARE_REWARDS {
                if let Some(row) = table.rows.iter().find(|r| r.k == k) {
                    check(checks, format!("gamma=0.125 k={k}: {:.3} vs {reference}", row.cost_aware), (row.cost_aware - reference).abs() <= 0.01);
                }
            }
        }
        for row in &table.rows {
            log.record("reward_row", &json!({"gamma": table.gamma, "k": row.k, "measured": row.measured, "cost_aware": row.cost_aware}))?;
        }
        tsv.push_str(&format!("# gamma = {}\n", table.gamma));
        tsv.push_str(&table.to_tsv());
        if cfg.plot_ready {
            write_plot(
                &cfg.out_dir.join(format!("reward_gamma{}.dat", table.gamma)),
                table.rows.iter().map(|r| (r.k as f64, r.cost_aware)),
            )?;
        }
    }
    std::fs::write(cfg.out_dir.join("reward-table.tsv"), tsv)?;
    serde_json::to_value(&tables).map_err(|e| CliError::Runtime(e.to_string()))
}

fn analyze_nabla(log: &mut MetricsLog, checks: &mut Vec<Check>) -> Result<Value, CliError> {
    let at = |delta: f64| nabla_metric(delta, 0.0).nabla;
    let fixed = [(0.0, 0.0), (1.0, 0.71828), (-1.0, 0.36788)];
    for (delta, expect) in fixed {
        let got = at(delta);
        check(checks, format!("nabla({delta}) = {expect}"), (got - expect).abs() <= 1e-5);
        log.record("nabla", &json!({"delta": delta, "nabla": got}))?;
    }
    let grid: Vec<f64> = (-2000..=2000).map(|i| i as f64 * 0.01).collect();
    let mut min_off_zero = f64::INFINITY;
    let mut negative = 0;
    for &delta in &grid {
        let v = at(delta);
        if v < 0.0 {
            negative += 1;
        }
        if delta != 0.0 {
            min_off_zero = min_off_zero.min(v);
        }
    }
    check(checks, "nabla >= 0 on [-20, 20]", negative == 0);
    check(checks, "nabla > 0 away from delta = 0", min_off_zero > 0.0);
    Ok(json!({"grid_points": grid.len(), "negative": negative, "min_off_zero": min_off_zero}))
}
