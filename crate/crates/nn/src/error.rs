use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numerical failure: {0}")]
    NonFinite(String),
    #[error("input too short: needs at least {needed} steps, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl From<vattr_core::Error> for NnError {
    fn from(e: vattr_core::Error) -> Self {
        NnError::Format(e.to_string())
    }
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;
