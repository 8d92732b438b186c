#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] vattr_nn::NnError),
    #[error(transparent)]
    Core(#[from] vattr_core::Error),
    #[error("{what} too short: needs at least {needed}, got {got}")]
    TooShort {
        what: &'static str,
        needed: usize,
        got: usize,
    },
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("numerical failure: {0}")]
    NonFinite(String),
    #[error("invalid attention record: {0}")]
    Attention(String),
}

impl ModelError {
    /// True for failures caused by NaN or infinite values.
    pub fn is_numerical(&self) -> bool {
        matches!(self, ModelError::NonFinite(_) | ModelError::Nn(vattr_nn::NnError::NonFinite(_)))
    }
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;
