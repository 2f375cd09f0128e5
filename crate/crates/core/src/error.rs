use thiserror::Error;

/// Errors raised by the simulation and identification kernels.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("numerical failure{}: {reason}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NumericalFailure { step: Option<usize>, reason: String },
    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::NumericalFailure {
            step: None,
            reason: msg.into(),
        }
    }

    pub(crate) fn numerical_at(step: usize, msg: impl Into<String>) -> Self {
        Error::NumericalFailure {
            step: Some(step),
            reason: msg.into(),
        }
    }
}

impl Error {
    /// Attaches `step` to a numerical failure that has none.
    pub fn at_step(self, step: usize) -> Self {
        match self {
            Error::NumericalFailure { step: None, reason } => Error::NumericalFailure {
                step: Some(step),
                reason,
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
