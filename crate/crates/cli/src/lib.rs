//! Command-line front end: config parsing, task assembly, and the
//! `pretrain`, `train-ppow`, `eval` and `analyze` commands.

pub mod commands;
pub mod config;
pub mod output;
pub mod pipeline;

pub use config::{RunConfig, TrainArm};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] ppow_core::Error),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    /// 1 for usage and config problems, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::Core(ppow_core::Error::Config(_)) => 1,
            CliError::Core(_) | CliError::Runtime(_) => 2,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}
