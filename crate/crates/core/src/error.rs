use thiserror::Error;

/// Errors raised while building inputs or fitting the model.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty regime")]
    EmptyRegime,

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    /// A numerical failure inside the EM loop, with its location.
    #[error("iteration {iteration}: {source}")]
    Fit {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        match self {
            e @ Error::Fit { .. } => e,
            other => Error::Fit {
                iteration,
                source: Box::new(other),
            },
        }
    }

    /// True when the failure is numerical rather than a malformed input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite(_) | Error::NonFinite(_) | Error::EmptyRegime | Error::Fit { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
