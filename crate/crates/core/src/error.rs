use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch ({details})")]
    ShapeMismatch { op: &'static str, details: String },

    #[error("{op}: domain error ({details})")]
    Domain { op: &'static str, details: String },

    #[error("operands belong to different tapes")]
    TapeMismatch,

    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("backward root is not attached to a tape")]
    DetachedRoot,

    #[error("merge requires at least one natural-parameter term")]
    EmptyMerge,

    #[error("zero total precision in dimension {0}")]
    ZeroPrecision(usize),

    #[error("model error: {0}")]
    Model(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(op: &'static str, details: impl Into<String>) -> Self {
        Error::ShapeMismatch { op, details: details.into() }
    }

    pub fn domain(op: &'static str, details: impl Into<String>) -> Self {
        Error::Domain { op, details: details.into() }
    }
}
