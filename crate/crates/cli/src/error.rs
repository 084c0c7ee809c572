use std::process::ExitCode;

use thiserror::Error;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("I/O error: {0}")]
    Io(String),

    #[error("check failed: {0}")]
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Check(_) => 1,
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Training(_) => 3,
            CliError::Io(_) => 4,
        })
    }

    /// Classifies a library error raised while training or evaluating.
    pub fn training(e: fedntc::Error) -> Self {
        match e {
            fedntc::Error::Config(m) => CliError::Config(m),
            fedntc::Error::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Training(other.to_string()),
        }
    }

    /// Classifies a library error raised while reading artifacts.
    pub fn loading(e: fedntc::Error) -> Self {
        match e {
            fedntc::Error::Config(m) => CliError::Config(m),
            other => CliError::Io(other.to_string()),
        }
    }

    pub fn io(context: impl std::fmt::Display, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{context}: {e}"))
    }
}
