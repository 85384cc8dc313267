use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("length mismatch: left operand has {left} elements, right operand has {right}")]
    ShapeMismatch { left: usize, right: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("iterate diverged at coordinate {index} (|x| = {value:e})")]
    Diverged { index: usize, value: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
