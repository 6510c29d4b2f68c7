use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ppow_cli::commands::{cmd_eval, cmd_pretrain, cmd_train_ppow, EVAL_TABLE, FINAL_CHECKPOINT, PRETRAIN_CHECKPOINT};
use ppow_cli::output::LOCK_FILE;
use ppow_cli::RunConfig;
use ppow_core::corpus::{write_corpus, GrammarSpec};
use ppow_core::models::{checkpoint_load, checkpoint_save};
use ppow_core::DrafterParameters;

fn ppow(args: &[&str], cwd: &Path, seed_env: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ppow"));
    cmd.args(args).current_dir(cwd).env_remove("PPOW_SEED");
    if let Some(s) = seed_env {
        cmd.env("PPOW_SEED", s);
    }
    cmd.output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

/// A small grammar task in `root`; `extra` lines are appended to the config.
fn setup(root: &Path, extra: &str) -> PathBuf {
    GrammarSpec::random(3, 2, 0.3, 5).unwrap().save(&root.join("grammar.txt")).unwrap();
    let cfg = root.join("run.cfg");
    std::fs::write(
        &cfg,
        format!(
            "grammar_path = grammar.txt\nvocab_size = 3\ncorpus_sequences = 100\ncorpus_length = 40\n\
             eval_prompts = 16\nsft_steps = 200\ntotal_steps = 20\nwindow = 4\nresponse_len = 8\n\
             group_size = 4\neval_k = 4\neval_max_tokens = 40\nseed = 3\n{extra}"
        ),
    )
    .unwrap();
    cfg
}

fn config(root: &Path, extra: &str, out: &str) -> RunConfig {
    let mut cfg = RunConfig::load(&setup(root, extra)).unwrap();
    cfg.out_dir = root.join(out);
    cfg
}

fn body(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().filter(|l| !l.starts_with('#')).map(String::from).collect()
}

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&ppow(&["--help"], dir.path(), None)), 0);
    assert_eq!(code(&ppow(&["--version"], dir.path(), None)), 0);
}

#[test]
fn usage_and_config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    setup(root, "");
    assert_eq!(code(&ppow(&["frobnicate"], root, None)), 1);
    assert_eq!(code(&ppow(&["pretrain"], root, None)), 1);
    assert_eq!(code(&ppow(&["train-ppow", "--config", "run.cfg"], root, None)), 1);
    let bad_suite = ppow(&["analyze", "--suite", "nonsense"], root, None);
    assert_eq!(code(&bad_suite), 1);
    assert!(String::from_utf8_lossy(&bad_suite.stderr).contains("nonsense"));

    std::fs::write(root.join("typo.cfg"), "grammar_path = grammar.txt\nlearning_rate = 0.1\n").unwrap();
    let typo = ppow(&["pretrain", "--config", "typo.cfg"], root, None);
    assert_eq!(code(&typo), 1);
    assert!(String::from_utf8_lossy(&typo.stderr).contains("learning_rate"));

    std::fs::write(root.join("range.cfg"), "grammar_path = grammar.txt\neps_clip = 1.5\n").unwrap();
    assert_eq!(code(&ppow(&["pretrain", "--config", "range.cfg"], root, None)), 1);
}

#[test]
fn runtime_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    setup(root, "");
    let missing = ppow(&["eval", "--config", "run.cfg", "--init", "missing.ckpt", "--out", "e"], root, None);
    assert_eq!(code(&missing), 2);

    std::fs::create_dir_all(root.join("locked")).unwrap();
    std::fs::write(root.join("locked").join(LOCK_FILE), "1\n").unwrap();
    let locked = ppow(&["pretrain", "--config", "run.cfg", "--out", "locked"], root, None);
    assert_eq!(code(&locked), 2);
    assert!(String::from_utf8_lossy(&locked.stderr).contains("locked"));
}

#[test]
fn zero_pretraining_steps_save_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "sft_steps = 0\n", "out");
    let summary = cmd_pretrain(&cfg).unwrap();
    let saved = checkpoint_load(&summary.checkpoint, Some(cfg.shape())).unwrap();
    assert_eq!(saved, DrafterParameters::init(cfg.shape(), cfg.seed).unwrap());
    assert_eq!(summary.tau_init, summary.tau_final);
    assert!(!cfg.out_dir.join(LOCK_FILE).exists());
}

#[test]
fn zero_training_steps_return_the_input_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let pre = config(dir.path(), "", "pre");
    let init = cmd_pretrain(&pre).unwrap().checkpoint;
    let mut cfg = config(dir.path(), "total_steps = 0\n", "train");
    cfg.seed = pre.seed;
    let summary = cmd_train_ppow(&cfg, &init).unwrap();
    assert_eq!(summary.checkpoint, cfg.out_dir.join(FINAL_CHECKPOINT));
    assert_eq!(checkpoint_load(&summary.checkpoint, None).unwrap(), checkpoint_load(&init, None).unwrap());
}

#[test]
fn seed_environment_variable_matches_config_seed() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    setup(root, "");
    std::fs::write(root.join("seed9.cfg"), std::fs::read_to_string(root.join("run.cfg")).unwrap() + "seed = 9\n").unwrap();
    assert!(ppow(&["pretrain", "--config", "seed9.cfg", "--out", "cfg"], root, None).status.success());
    assert!(ppow(&["pretrain", "--config", "run.cfg", "--out", "env"], root, Some("9")).status.success());
    assert!(ppow(&["pretrain", "--config", "run.cfg", "--out", "base"], root, None).status.success());
    let ckpt = |d: &str| body(&root.join(d).join(PRETRAIN_CHECKPOINT));
    assert_eq!(ckpt("cfg"), ckpt("env"));
    assert_ne!(ckpt("cfg"), ckpt("base"));
}

#[test]
fn reruns_write_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let a = cmd_pretrain(&config(dir.path(), "", "a")).unwrap();
    let b = cmd_pretrain(&config(dir.path(), "", "b")).unwrap();
    assert_eq!(body(&a.checkpoint), body(&b.checkpoint));
    assert_eq!(a.tau_final, b.tau_final);
}

#[test]
fn pretraining_raises_acceptance_length() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "sft_steps = 5000\n", "out");
    let s = cmd_pretrain(&cfg).unwrap();
    assert!(s.tau_final > s.tau_init, "{} -> {}", s.tau_init, s.tau_final);
}

#[test]
fn single_sweep_point_gives_single_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "sft_steps = 50\n", "pre");
    let init = cmd_pretrain(&cfg).unwrap().checkpoint;
    let mut eval_cfg = cfg.clone();
    eval_cfg.out_dir = dir.path().join("eval");
    let rows = cmd_eval(&eval_cfg, &init).unwrap();
    assert_eq!(rows.len(), 1);
    let table = std::fs::read_to_string(eval_cfg.out_dir.join(EVAL_TABLE)).unwrap();
    assert_eq!(table.lines().count(), 2);
}

#[test]
fn exact_drafter_checkpoint_accepts_every_window() {
    // Strictly alternating data: the target is deterministic, and a drafter
    // whose logits flip with the last token reproduces it.
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let corpus: Vec<Vec<u32>> = (0..40).map(|i| (0..30).map(|t| ((i + t) % 2) as u32).collect()).collect();
    write_corpus(&root.join("alt.txt"), &corpus).unwrap();
    std::fs::write(
        root.join("alt.cfg"),
        "corpus_path = alt.txt\nvocab_size = 2\nembed_dim = 1\ncontext_len = 2\nhidden_dim = 1\n\
         smoothing = 0\neval_prompts = 8\neval_k = 5\neval_max_tokens = 60\n",
    )
    .unwrap();
    let mut cfg = RunConfig::load(&root.join("alt.cfg")).unwrap();
    cfg.out_dir = root.join("eval");

    // embedding (2×1), hidden_weight (2×1), hidden_bias, output_weight (1×2), output_bias.
    let values = vec![-1.0, 1.0, 0.0, 10.0, 0.0, 100.0, -100.0, 0.0, 0.0];
    let drafter = DrafterParameters::from_values(cfg.shape(), values).unwrap();
    let q = drafter.forward(&[0, 1], None).unwrap().dist;
    assert!(q.prob(0) > 1.0 - 1e-12);
    let ckpt = root.join("exact.ckpt");
    checkpoint_save(&drafter, &ckpt, &[]).unwrap();

    let rows = cmd_eval(&cfg, &ckpt).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].tau, 5.0);
}
