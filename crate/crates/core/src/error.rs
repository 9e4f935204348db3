use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error(
        "correlation matrix (n = {n}, rho = {rho}) is not positive definite; \
         check for near-duplicate locations or an extreme range"
    )]
    NotPositiveDefinite { n: usize, rho: f64 },

    #[error("{0} did not converge")]
    Convergence(String),

    #[error("degenerate observations: {0}")]
    DegenerateObservations(String),

    #[error("every likelihood evaluation on [{lower}, {upper}] failed to factorize")]
    AllFactorizationsFailed { lower: f64, upper: f64 },

    #[error("{failed} of {total} replicate units failed (limit {limit})")]
    TooManyFailures { failed: usize, total: usize, limit: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerical pipeline (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::Convergence(_)
                | Error::DegenerateObservations(_)
                | Error::AllFactorizationsFailed { .. }
                | Error::TooManyFailures { .. }
        )
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
