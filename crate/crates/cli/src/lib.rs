//! Library side of the `qdob` command-line tool: configuration schema,
//! subcommands and exit-code mapping.

pub mod commands;
pub mod config;

pub use commands::{run, Action, Options};
pub use config::ExperimentConfig;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
    #[error(transparent)]
    Core(#[from] qdob::Error),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn single(msg: impl Into<String>) -> Self {
        CliError::Validation(vec![msg.into()])
    }

    /// 1 validation, 2 numeric fault, 3 i/o.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Core(qdob::Error::NumericFault { .. } | qdob::Error::LagOutOfRange { .. }) => 2,
            CliError::Core(_) => 1,
            CliError::Io(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
