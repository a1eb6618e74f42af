// SPDX-License-Identifier: MIT OR Apache-2.0

use thiserror::Error;

/// Errors raised by the detection library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A caller broke a structural contract (dimension mismatch, empty input, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// The observed block of the per-date covariance cannot be inverted reliably.
    #[error("singular observed covariance{}: {detail}", date.map(|t| format!(" at date {t}")).unwrap_or_default())]
    Singular { date: Option<usize>, detail: String },

    /// Invalid observation data.
    #[error("input error at date {date}, component {component}: {detail}")]
    Input {
        date: usize,
        component: usize,
        detail: String,
    },

    /// A factorization that cannot fail by construction failed anyway.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A conditional moment requested outside its existence region.
    #[error("moment undefined: {0}")]
    MomentUndefined(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Self::Domain(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Self::Contract(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Self::Numerical(msg.into())
    }

    /// Attaches a date to a singularity error raised without one.
    pub fn at_date(self, t: usize) -> Self {
        match self {
            Self::Singular { date: None, detail } => Self::Singular {
                date: Some(t),
                detail,
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
