use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the precoding toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("bisection bracket failure after {steps} doublings (power {power:.6e} > budget {budget:.6e})")]
    BisectionBracket { steps: usize, power: f64, budget: f64 },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("sample {id}: {source}")]
    Sample {
        id: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss { epoch: usize, batch: usize, detail: String },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
