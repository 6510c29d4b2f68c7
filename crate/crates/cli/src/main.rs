use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ppow_cli::commands::{cmd_analyze, cmd_eval, cmd_pretrain, cmd_train_ppow, eval_table, Suite};
use ppow_cli::{CliError, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "ppow", version, about = "Speculative-decoding drafter training and analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Drafter checkpoint to start from or evaluate.
    #[arg(long, global = true)]
    init: Option<PathBuf>,
    /// Output directory; overrides `out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Root seed; overrides `seed`.
    #[arg(long, global = true, env = "PPOW_SEED")]
    seed: Option<u64>,
    /// Analysis suite: pinsker, reward-table, nabla, easy-hard.
    #[arg(long, global = true)]
    suite: Option<String>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Fit the target and run supervised drafter pretraining.
    Pretrain,
    /// Policy-optimize a drafter checkpoint.
    TrainPpow,
    /// Evaluate a checkpoint over the configured (K, G, temperature) sweep.
    Eval,
    /// Run an analysis suite and write its report.
    Analyze,
}

fn resolve(cli: &Cli, required: bool) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None if required => return Err(CliError::Usage("this command needs --config PATH".into())),
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn need_init(cli: &Cli) -> Result<&PathBuf, CliError> {
    cli.init.as_ref().ok_or_else(|| CliError::Usage("this command needs --init CKPT".into()))
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Pretrain => {
            let s = cmd_pretrain(&resolve(cli, true)?)?;
            println!("checkpoint {}\ntau {:.4} -> {:.4}", s.checkpoint.display(), s.tau_init, s.tau_final);
        }
        Command::TrainPpow => {
            let cfg = resolve(cli, true)?;
            let s = cmd_train_ppow(&cfg, need_init(cli)?)?;
            println!("checkpoint {}\ntau {:.4} -> {:.4}", s.checkpoint.display(), s.tau_init, s.tau_final);
        }
        Command::Eval => {
            let cfg = resolve(cli, true)?;
            let rows = cmd_eval(&cfg, need_init(cli)?)?;
            print!("{}", eval_table(&rows));
        }
        Command::Analyze => {
            let name = cli
                .suite
                .as_deref()
                .ok_or_else(|| CliError::Usage("analyze needs --suite NAME".into()))?;
            let suite: Suite = name.parse()?;
            let cfg = resolve(cli, false)?;
            let report = cmd_analyze(&cfg, suite, cli.init.as_deref())?;
            for c in &report.checks {
                println!("{} {}", if c.passed { "pass" } else { "FAIL" }, c.name);
            }
            println!("{}: {}", report.suite, if report.passed { "pass" } else { "FAIL" });
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
