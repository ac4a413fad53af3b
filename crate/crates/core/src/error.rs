use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    Shape {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("length mismatch: expected {expected}, got {actual}")]
    Length { expected: usize, actual: usize },

    #[error("non-finite value produced in {0}")]
    NonFinite(&'static str),

    #[error("zero-norm feature vector cannot be normalized")]
    ZeroNorm,

    #[error("tape does not match network: {0}")]
    TapeMismatch(String),

    #[error("sparsification budget {budget} exceeds layer length {len} (layer {layer})")]
    Budget {
        layer: usize,
        budget: usize,
        len: usize,
    },

    #[error("index {index} out of range for layer {layer} of length {len}")]
    IndexOutOfRange {
        layer: usize,
        index: usize,
        len: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dataset error: {0}")]
    Data(String),

    #[error("malformed {kind} file: {reason}")]
    Format { kind: &'static str, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(expected: &[usize], actual: &[usize]) -> Self {
        Error::Shape {
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }

    pub(crate) fn format(kind: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            kind,
            reason: reason.into(),
        }
    }
}
