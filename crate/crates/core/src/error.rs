use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("alignment mismatch for {what}: expected {expected} lines, found {found}")]
    Alignment {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("requested {requested} sentences for style {style} but only {available} available")]
    Size {
        style: usize,
        requested: usize,
        available: usize,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("token id {id} out of range for vocabulary of size {size}")]
    Range { id: u32, size: usize },

    #[error("sequence of {len} tokens exceeds the maximum length {max}")]
    Length { len: usize, max: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("semantic encoder failed: {0}")]
    Adapter(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from bad user input or configuration rather
    /// than a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Format { .. }
                | Error::Alignment { .. }
                | Error::Size { .. }
                | Error::Config(_)
                | Error::Input(_)
                | Error::Range { .. }
                | Error::Length { .. }
                | Error::Domain(_)
        )
    }
}
