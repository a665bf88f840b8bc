use serde::Serialize;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, AppError>;

#[derive(Debug, Error)]
pub enum AppError {
    #[error(transparent)]
    Core(#[from] duacm_core::Error),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },

    #[error("bundle: {0}")]
    Bundle(String),

    #[error("{0}")]
    Usage(String),

    #[error("output validation failed: {0}")]
    Validation(String),
}

impl AppError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        AppError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Stable machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            AppError::Core(e) => match e {
                duacm_core::Error::InvalidSpec { .. } => "invalid_spec",
                duacm_core::Error::Parse { .. } => "parse",
                duacm_core::Error::Schema(_) | duacm_core::Error::DimensionMismatch { .. } => "schema",
                duacm_core::Error::UnknownDiagnosis(_) => "unknown_diagnosis",
                duacm_core::Error::ExcludesAll(_) | duacm_core::Error::ConfirmExcluded(_) => "conflict",
                duacm_core::Error::Io(_) => "io",
                _ => "invalid_input",
            },
            AppError::Config(_) => "config",
            AppError::Io { .. } => "io",
            AppError::Bundle(_) => "bundle",
            AppError::Usage(_) => "usage",
            AppError::Validation(_) => "validation",
        }
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Body<'a> {
            error: Detail<'a>,
        }
        #[derive(Serialize)]
        struct Detail<'a> {
            kind: &'a str,
            message: String,
        }
        serde_json::to_string(&Body {
            error: Detail {
                kind: self.kind(),
                message: self.to_string(),
            },
        })
        .expect("error body serialises")
    }
}
