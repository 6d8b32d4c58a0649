use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("weights must be positive: weight {index} is {value}")]
    NonPositiveWeight { index: usize, value: f64 },

    #[error("weights sum to {0}, expected 1")]
    NotNormalized(f64),

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("map failed on support point {index}")]
    MapFailed { index: usize },

    #[error("non-finite state at step {step}")]
    NonFinite { step: usize },

    #[error("step budget of {max_steps} exhausted before reaching t = {t_final}")]
    StepBudget { max_steps: usize, t_final: f64 },

    #[error("time {t} outside the stored range [{start}, {end}]")]
    TimeOutOfRange { t: f64, start: f64, end: f64 },

    #[error("time {t} is not a stored snapshot time")]
    NotOnGrid { t: f64 },

    #[error("time {t} coincides with a collision event")]
    AtEvent { t: f64 },

    #[error("unknown particle index {0}")]
    UnknownIndex(usize),

    #[error("empty histogram cell {0}")]
    EmptyCell(String),

    #[error("internal invariant violated: {0}")]
    Internal(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
