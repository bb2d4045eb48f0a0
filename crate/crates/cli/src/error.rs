use std::path::Path;

use thiserror::Error;

/// Failure categories, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),
    #[error("training aborted: {0}")]
    NonFinite(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("replay mismatch:\n  - {}", .0.join("\n  - "))]
    ReplayMismatch(Vec<String>),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::NonFinite(_) => 3,
            CliError::Io { .. } => 4,
            CliError::ReplayMismatch(_) => 5,
            CliError::Other(_) => 1,
        }
    }
}

impl From<blpinn::training::TrainError> for CliError {
    fn from(e: blpinn::training::TrainError) -> Self {
        use blpinn::training::TrainError;
        match e {
            TrainError::Config(v) => CliError::Config(v),
            TrainError::NonFiniteGradient { .. } => CliError::NonFinite(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<blpinn::evaluation::EvalError> for CliError {
    fn from(e: blpinn::evaluation::EvalError) -> Self {
        use blpinn::evaluation::EvalError;
        match e {
            EvalError::Train(t) => t.into(),
            EvalError::Io(source) => CliError::Io {
                path: "<output>".into(),
                source,
            },
            other => CliError::Other(other.to_string()),
        }
    }
}
