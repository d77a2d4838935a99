use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("floating-point overflow at t = {t}")]
    Overflow { t: i64 },

    #[error("singular resolvent: z is an eigenvalue of A")]
    SingularResolvent,

    #[error("eigenvalue computation did not converge")]
    Eigensolver,

    #[error("I + D is singular; the Cayley transform is not defined")]
    SingularFeedthrough,

    #[error("ill-posed algebraic loop: {0}")]
    IllPosed(String),

    #[error("certificates computed at different weights ({0} vs {1})")]
    MismatchedRho(f64, f64),

    #[error("adaptation gain lost positive definiteness at step {step}")]
    GainBreakdown { step: i64 },

    #[error("declared sector or bound violated: {0}")]
    SectorViolation(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("empty input: {0}")]
    Empty(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
