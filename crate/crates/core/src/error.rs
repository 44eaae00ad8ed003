use thiserror::Error;

use crate::lmnn::TrainingTrace;

/// Errors produced by the metric-learning routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    /// A trainer hit a non-finite objective; the trace covers every step up
    /// to the failure.
    #[error("numerical failure during training: {message}")]
    TrainingDiverged { message: String, trace: Box<TrainingTrace> },
}

impl Error {
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NumericalFailure(_) | Error::TrainingDiverged { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
