use std::path::PathBuf;

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numeric(#[source] semiflow::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        Self::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    /// Process exit status: 2 for configuration or file problems, 3 for
    /// failures inside a simulation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Io { .. } => 2,
            Self::Numeric(_) => 3,
        }
    }
}

/// Errors while building a scenario are configuration errors.
pub(crate) fn setup(e: semiflow::Error) -> CliError {
    CliError::Config(e.to_string())
}

pub(crate) fn numeric(e: semiflow::Error) -> CliError {
    CliError::Numeric(e)
}
