use std::io;

use thiserror::Error;

/// Errors raised by the memory manager, the stream tooling and the runner.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, ids or ordering that violate a data contract.
    #[error("structural error: {0}")]
    Structural(String),

    /// Invalid user-supplied configuration.
    #[error("config error: {0}")]
    Config(String),

    /// A runtime invariant (budget, disjointness) was violated.
    #[error("invariant violation: {0}")]
    Invariant(String),

    /// A container or checkpoint could not be decoded.
    #[error("format error: {0}")]
    Format(String),

    /// Enumeration guard tripped in the exact solver.
    #[error("oracle guard: pool of {size} exceeds the enumeration limit of {limit}")]
    OracleGuard { size: usize, limit: usize },

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn structural(msg: impl Into<String>) -> Self {
        Error::Structural(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// Short machine-readable kind, used in error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Structural(_) => "structural",
            Error::Config(_) => "config",
            Error::Invariant(_) => "invariant",
            Error::Format(_) => "format",
            Error::OracleGuard { .. } => "oracle_guard",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    /// Process exit code: 2 config, 3 invariant violation, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::OracleGuard { .. } => 2,
            Error::Structural(_) | Error::Invariant(_) => 3,
            Error::Format(_) | Error::Io(_) | Error::Json(_) => 4,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
