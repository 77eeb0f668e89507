use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument violates a documented precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// A persisted file does not match the expected layout.
    #[error("format error: {0}")]
    Format(String),

    /// A linear-algebra or optimisation step produced an unusable result.
    #[error("numerical error: {0}")]
    Numeric(String),

    #[error("defect placement error: {0}")]
    DefectPlacement(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
