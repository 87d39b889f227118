use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid noise specification: {0}")]
    InvalidNoiseSpec(String),

    /// A numerical invariant was violated. `step` is the integration step
    /// at which it was detected, when there is one.
    #[error("numeric failure{}: {message}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NumericFailure { step: Option<usize>, message: String },

    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numeric(step: Option<usize>, msg: impl Into<String>) -> Self {
        Error::NumericFailure {
            step,
            message: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
