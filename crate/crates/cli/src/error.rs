// SPDX-License-Identifier: MIT OR Apache-2.0

use thiserror::Error;

/// Failures surfaced to the command line, each with its exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("input error: {0}")]
    Input(String),

    #[error("config error: key `{key}`: {detail}")]
    Config { key: String, detail: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) | CliError::Io { .. } => 2,
            CliError::Config { .. } => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub(crate) fn config(key: &str, detail: impl Into<String>) -> Self {
        CliError::Config {
            key: key.to_string(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

/// Errors raised while running the model on data: bad observations are input
/// errors, everything else is numerical.
impl From<renewcp::Error> for CliError {
    fn from(e: renewcp::Error) -> Self {
        match e {
            renewcp::Error::Input { .. } | renewcp::Error::Contract(_) => CliError::Input(e.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
