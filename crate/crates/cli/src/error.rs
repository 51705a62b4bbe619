//! Failure classes and their exit codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at line {line}, column {column}: {message}")]
    Config {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Numerical(#[from] heatdbc::Error),

    #[error("{0}")]
    Failed(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn config(line: usize, column: usize, message: impl Into<String>) -> Self {
        Self::Config {
            line,
            column,
            message: message.into(),
        }
    }

    /// 2 for usage or configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } | Self::Usage(_) => 2,
            Self::Numerical(_) | Self::Failed(_) | Self::Io { .. } => 1,
        }
    }
}
