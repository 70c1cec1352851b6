use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The correlation matrix could not be factorized. `index` is the
    /// offending Cholesky pivot (or eigenvalue position in ascending order)
    /// and `value` its numerical value.
    #[error("factorization failed at index {index} (value {value:e})")]
    Factorization { index: usize, value: f64 },

    #[error("kriging system is singular (condition number estimate {kappa:e}): {reason}")]
    ModelSingular { kappa: f64, reason: String },

    #[error("regularization failed: {0}")]
    RegularizationFailed(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
