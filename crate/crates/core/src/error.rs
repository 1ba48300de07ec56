use thiserror::Error;

use crate::decomposer::CandidateId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("unknown CAN id {0:#05x}")]
    UnknownId(u16),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("series {0} has no nonzero value and cannot be normalized")]
    AllZero(CandidateId),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("candidate {0} not present in the report")]
    TruthAbsent(CandidateId),

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("configuration hash mismatch: model was built with {expected}, current config is {actual}")]
    ConfigMismatch { expected: String, actual: String },

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("value {value} overflows {bits}-bit field at {location}")]
    FieldOverflow {
        value: f64,
        bits: u32,
        location: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
