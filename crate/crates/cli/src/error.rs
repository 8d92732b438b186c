use std::fmt;

use vattr_core::Error as CoreError;
use vattr_model::ModelError;

/// Process exit status categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    /// Bad flags, configuration or inconsistent inputs.
    User = 1,
    /// Unreadable or malformed data on disk.
    Data = 2,
    /// NaN, infinity or a numerically invalid analysis.
    Numerical = 3,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    pub fn user(message: impl Into<String>) -> Self {
        Self {
            kind: ExitKind::User,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            kind: ExitKind::Data,
            message: message.into(),
        }
    }

    pub fn code(&self) -> i32 {
        self.kind as i32
    }

    /// Prefixes the message, e.g. with the utterance or path involved.
    pub fn context(mut self, what: impl fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let kind = match e {
            CoreError::InvalidArgument(_) => ExitKind::User,
            CoreError::UnstableReflection { .. } => ExitKind::Numerical,
            _ => ExitKind::Data,
        };
        Self {
            kind,
            message: e.to_string(),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        let kind = match &e {
            _ if e.is_numerical() => ExitKind::Numerical,
            ModelError::Core(CoreError::InvalidArgument(_)) => ExitKind::User,
            ModelError::Core(CoreError::UnstableReflection { .. }) => ExitKind::Numerical,
            ModelError::Config(_) | ModelError::MissingInput(_) => ExitKind::User,
            _ => ExitKind::Data,
        };
        Self {
            kind,
            message: e.to_string(),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
