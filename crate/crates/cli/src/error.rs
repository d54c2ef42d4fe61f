use std::path::{Path, PathBuf};

use mortality_core::MortalityError;
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] MortalityError),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("{0}")]
    Usage(String),

    #[error("sequential-choice bounds violated: max slack {max_slack:e} exceeds {tolerance:e}")]
    OracleFailed { max_slack: f64, tolerance: f64 },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::File {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::File { .. } | CliError::Io(_) => "io",
            CliError::Json(_) => "json",
            CliError::Usage(_) => "usage",
            CliError::OracleFailed { .. } => "oracle_failed",
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    /// One-line JSON written to stderr.
    pub fn record(&self) -> String {
        let mut record = json!({ "error": self.kind(), "message": self.to_string() });
        match self {
            CliError::Core(MortalityError::Parse { line, .. }) => record["line"] = json!(line),
            CliError::Core(MortalityError::InvalidRecord { patient_id, invariant }) => {
                record["patient_id"] = json!(patient_id);
                record["invariant"] = json!(invariant);
            }
            CliError::File { path, .. } => record["path"] = json!(path.display().to_string()),
            _ => {}
        }
        record.to_string()
    }
}
