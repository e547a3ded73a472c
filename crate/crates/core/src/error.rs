use thiserror::Error;

/// Errors raised by the numerical routines in this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("unsupported cumulant order {0}")]
    UnsupportedOrder(usize),

    #[error("ill-conditioned: {0}")]
    IllConditioned(String),

    #[error("rank deficient: {0}")]
    RankDeficient(String),

    /// A Poisson draw exceeded the truncation threshold. The whole run must stop.
    #[error("reduction failure: Poisson count {count} exceeded threshold {tau}")]
    ReductionFailure { count: u64, tau: u64 },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
