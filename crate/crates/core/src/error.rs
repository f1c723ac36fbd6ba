use thiserror::Error;

/// Errors raised by the estimation toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported polygamma order {0} (only 1 and 2 are available)")]
    UnsupportedOrder(u32),

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("Fisher information is not positive definite at iterate {iteration}: {source}")]
    FisherBreakdown {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty sample")]
    EmptySample,

    #[error("sample needs at least {needed} observations, got {got}")]
    SampleTooSmall { needed: usize, got: usize },

    #[error("sample variance is zero")]
    ZeroVariance,

    #[error("backtracking failed to improve the log-likelihood at iteration {iteration}")]
    NoImprovement { iteration: usize },

    #[error("invalid step schedule: {0}")]
    InvalidSchedule(String),

    #[error("unknown estimator `{0}`")]
    UnknownEstimator(String),

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("step constant c = {c} violates c > 1/(2 lambda_min) = {bound}")]
    StepConstantTooSmall { c: f64, bound: f64 },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
