use thiserror::Error;

pub type Result<T> = std::result::Result<T, QotError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QotError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "sampling failure: rejection budget of {budget} attempts exhausted \
         (empirical acceptance rate {acceptance_rate:.3e})"
    )]
    SamplingFailure { acceptance_rate: f64, budget: u64 },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("fit failure: {0}")]
    FitFailure(String),
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(QotError::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}
