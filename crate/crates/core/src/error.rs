use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dual point {value} outside the domain [{lo}, {hi}] of the {loss} loss")]
    Domain {
        loss: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("unknown loss `{0}` (expected exponential, logistic, hinge or quadratic)")]
    UnknownLoss(String),

    #[error("unknown kernel spec `{0}` (expected `count` or `gaussian:<width>`)")]
    UnknownKernel(String),

    #[error("unknown privacy metric `{0}` (expected `normalized` or `bayes_error`)")]
    UnknownMetric(String),

    #[error("operation requires the count kernel, got `{0}`")]
    UnsupportedKernel(String),

    #[error("invalid privacy mapping: {0}")]
    InvalidMapping(String),

    #[error("invalid training set: {0}")]
    InvalidTrainingSet(String),

    #[error("could not repair a privacy mapping row into the constrained set")]
    InfeasibleProjection,

    #[error("barrier infeasible: risk slack {slack} is not positive (threshold set too high)")]
    BarrierViolation { slack: f64 },

    #[error("message support of size {size} exceeds the enumeration limit {limit}")]
    SupportTooLarge { size: u128, limit: u128 },

    #[error("conditional distributions do not share a common support")]
    SupportMismatch,

    #[error("budget {epsilon} exceeds the prior entropy {entropy}")]
    BudgetTooLarge { epsilon: f64, entropy: f64 },

    #[error("correlation {rho} infeasible for the given priors (max {max})")]
    InfeasibleCorrelation { rho: f64, max: f64 },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("no rows left after filtering")]
    EmptyAfterFiltering,

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Schema(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
