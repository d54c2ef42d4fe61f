use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum MortalityError {
    /// A record broke one of the schema invariants; `invariant` names it.
    #[error("invalid record {patient_id}: {invariant}")]
    InvalidRecord {
        patient_id: String,
        invariant: &'static str,
    },

    #[error("cannot classify record {patient_id} under partition {partition}: {reason}")]
    Classification {
        patient_id: String,
        partition: String,
        reason: String,
    },

    #[error("conflicting terminal events for patient {0}")]
    JoinConflict(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("partition or horizon mismatch: {0}")]
    Mismatch(String),

    #[error("rank-deficient design: {0}")]
    RankDeficient(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl MortalityError {
    /// Short machine-readable tag, used by the CLI error record.
    pub fn kind(&self) -> &'static str {
        match self {
            MortalityError::InvalidRecord { .. } => "invalid_record",
            MortalityError::Classification { .. } => "classification",
            MortalityError::JoinConflict(_) => "join_conflict",
            MortalityError::Domain(_) => "domain",
            MortalityError::Precondition(_) => "precondition",
            MortalityError::Mismatch(_) => "mismatch",
            MortalityError::RankDeficient(_) => "rank_deficient",
            MortalityError::Parse { .. } => "parse",
            MortalityError::Csv(_) => "csv",
            MortalityError::Json(_) => "json",
            MortalityError::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, MortalityError>;
