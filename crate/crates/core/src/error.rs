use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Malformed input: wrong dimension, non-finite value, bad config field.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// A mathematical precondition does not hold (vanishing probability, bad support).
    #[error("domain error: {0}")]
    Domain(String),
    /// Operation called on a state that does not admit it.
    #[error("state error: {0}")]
    State(String),
    /// Enumeration would exceed the configured cap.
    #[error("resource limit: {0}")]
    Resource(String),
    /// Stored data disagrees with a recomputation (e.g. off-policy batch).
    #[error("inconsistency: {0}")]
    Inconsistency(String),
    /// The integrator produced a non-finite state.
    #[error("numeric divergence at t = {time}")]
    NumericDivergence { time: f64 },
    /// A path count does not fit in 64 bits.
    #[error("path count overflows u64 at {0:?}")]
    BigCount(Vec<usize>),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
