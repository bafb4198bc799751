use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    /// A precondition of an operation was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{}: parse error{}{}: {message}", path.display(),
        row.map(|r| format!(" at row {r}")).unwrap_or_default(),
        byte.map(|b| format!(" (byte offset {b})")).unwrap_or_default())]
    Parse {
        path: PathBuf,
        row: Option<u64>,
        byte: Option<u64>,
        message: String,
    },

    /// Training could not start, e.g. a treatment arm is missing.
    #[error("training setup: {0}")]
    Setup(String),

    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFinite { iteration: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Config and parse problems are user errors; everything else is a runtime failure.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Parse { .. })
    }
}
