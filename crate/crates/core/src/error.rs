use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{what} {value} out of range {range}")]
    OutOfRange {
        what: &'static str,
        value: usize,
        range: String,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("malformed sequence: {0}")]
    MalformedSequence(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("cache integrity violated at step {step}: {detail} (position {position})")]
    CacheIntegrity {
        position: usize,
        step: usize,
        detail: &'static str,
    },
}
