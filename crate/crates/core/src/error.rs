use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the model core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: invalid shape {shape:?} ({reason})")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: &'static str,
    },
    #[error("{op}: index {index} out of range for length {len}")]
    IndexOutOfRange { op: &'static str, index: usize, len: usize },
    #[error("{op}: non-finite value produced in verification mode")]
    NonFinite { op: &'static str },
    #[error("backward called on a consumed tape")]
    TapeConsumed,
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("parameter `{name}` expects shape {expected:?}, got {found:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("sequence of length {len} exceeds maximum {max}")]
    TooLong { len: usize, max: usize },
    #[error("invalid aspect span [{start}, {end}) for {len} tokens")]
    InvalidSpan { start: usize, end: usize, len: usize },
    #[error("invalid dependency parse: {0}")]
    InvalidParse(String),
    #[error("unknown relation id {id} (vocabulary size {size})")]
    UnknownRelation { id: usize, size: usize },
    #[error("degenerate embedding: {0}")]
    Degenerate(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
}

pub type Result<T> = core::result::Result<T, Error>;
