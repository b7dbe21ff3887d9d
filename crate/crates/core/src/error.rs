use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed binary payload. `offset` is the byte position where decoding failed.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("clip ids misaligned at position {position}: {left:?} vs {right:?}")]
    Alignment {
        position: usize,
        left: String,
        right: String,
    },

    #[error("synthetic generation failed: {0}")]
    Generation(String),

    #[error(
        "non-finite loss at epoch {epoch} (|W|_2 = {weight_norm:.6e}, |b|_2 = {bias_norm:.6e})"
    )]
    Training {
        epoch: usize,
        weight_norm: f64,
        bias_norm: f64,
    },

    /// A metric, correlation or share that has no defined value for the input.
    #[error("undefined: {0}")]
    Undefined(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing dependency: {0}")]
    Dependency(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(offset: usize, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Argument(_) | Error::Dependency(_) => 2,
            Error::Training { .. } => 4,
            Error::Format { .. }
            | Error::Validation(_)
            | Error::Alignment { .. }
            | Error::Generation(_)
            | Error::Undefined(_)
            | Error::Io { .. }
            | Error::Json(_) => 3,
        }
    }
}
