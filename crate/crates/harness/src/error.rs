use std::path::PathBuf;

use thiserror::Error;

/// Harness failures, grouped into the categories reported on exit.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Config(String),

    #[error("{0}")]
    Data(String),

    #[error("{0}")]
    Numeric(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Internal(String),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

impl HarnessError {
    /// Machine-readable category name.
    pub fn category(&self) -> &'static str {
        match self {
            HarnessError::Config(_) => "config",
            HarnessError::Data(_) => "data",
            HarnessError::Numeric(_) => "numeric",
            HarnessError::Io { .. } => "io",
            HarnessError::Internal(_) => "internal",
        }
    }

    /// Process exit code for the category.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Data(_) => 3,
            HarnessError::Numeric(_) => 4,
            HarnessError::Io { .. } => 5,
            HarnessError::Internal(_) => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<mean_teacher::Error> for HarnessError {
    fn from(e: mean_teacher::Error) -> Self {
        use mean_teacher::Error as E;
        match e {
            E::Config(_) | E::InvalidParameter(_) => HarnessError::Config(e.to_string()),
            E::Data(_) | E::Format { .. } | E::Provenance(_) => HarnessError::Data(e.to_string()),
            E::NonFinite { .. } => HarnessError::Numeric(e.to_string()),
            E::Io { path, source } => HarnessError::Io { path, source },
            other => HarnessError::Internal(other.to_string()),
        }
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        HarnessError::Internal(format!("csv: {e}"))
    }
}
