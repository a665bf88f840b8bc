use thiserror::Error;

use crate::cohort::DiagnosisId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid value for `{field}`: {reason}")]
    InvalidSpec { field: &'static str, reason: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("training data contains a single outcome class")]
    SingleClass,

    #[error("unknown diagnosis {0}")]
    UnknownDiagnosis(DiagnosisId),

    #[error("{0}")]
    InvalidInput(String),

    #[error("ruling out {} would leave no diagnosis with positive probability", id_list(.0))]
    ExcludesAll(Vec<DiagnosisId>),

    #[error("diagnosis {0} has been ruled out and cannot be confirmed")]
    ConfirmExcluded(DiagnosisId),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidSpec {
            field,
            reason: reason.into(),
        }
    }

    /// True for errors caused by an illegal session mutation.
    pub fn is_conflict(&self) -> bool {
        matches!(self, Error::ExcludesAll(_) | Error::ConfirmExcluded(_))
    }
}

fn id_list(ids: &[DiagnosisId]) -> String {
    let parts: Vec<String> = ids.iter().map(|d| d.to_string()).collect();
    format!("[{}]", parts.join(", "))
}
