use thiserror::Error;

/// Pipeline failure, grouped by the process exit code it maps to.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Data(_) => 3,
            HarnessError::Numeric(_) => 4,
        }
    }

    /// Prefixes the message with where the failure happened.
    pub fn context(self, what: impl std::fmt::Display) -> Self {
        match self {
            HarnessError::Config(m) => HarnessError::Config(format!("{what}: {m}")),
            HarnessError::Data(m) => HarnessError::Data(format!("{what}: {m}")),
            HarnessError::Numeric(m) => HarnessError::Numeric(format!("{what}: {m}")),
        }
    }
}

impl From<taskdn_core::Error> for HarnessError {
    fn from(e: taskdn_core::Error) -> Self {
        match e {
            taskdn_core::Error::Numeric(m) => HarnessError::Numeric(m),
            other => HarnessError::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for HarnessError {
    fn from(e: serde_json::Error) -> Self {
        HarnessError::Data(e.to_string())
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        HarnessError::Data(e.to_string())
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
