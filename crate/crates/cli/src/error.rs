use std::fmt;
use std::path::Path;

use qot_core::QotError;

/// Process exit status of a `qot` invocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Success = 0,
    CheckFailed = 1,
    InvalidInput = 2,
    SamplingFailure = 3,
    NumericalFailure = 4,
}

impl Exit {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug)]
pub struct CliError {
    pub exit: Exit,
    pub message: String,
}

impl CliError {
    pub fn invalid(message: impl Into<String>) -> Self {
        Self {
            exit: Exit::InvalidInput,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Self::invalid(format!("{}: {err}", path.display()))
    }

    pub fn context(self, what: impl fmt::Display) -> Self {
        Self {
            exit: self.exit,
            message: format!("{what}: {}", self.message),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<QotError> for CliError {
    fn from(err: QotError) -> Self {
        let exit = match err {
            QotError::SamplingFailure { .. } => Exit::SamplingFailure,
            QotError::NumericalFailure(_) => Exit::NumericalFailure,
            QotError::InvalidInput(_)
            | QotError::DimensionMismatch { .. }
            | QotError::InvalidParameter(_)
            | QotError::FitFailure(_) => Exit::InvalidInput,
        };
        Self {
            exit,
            message: err.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
