use alloc::string::String;

/// Errors raised by the reconstruction core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op} needs even spatial extents, got {height}x{width}")]
    OddDimensions {
        op: &'static str,
        height: usize,
        width: usize,
    },

    #[error("backward needs a scalar root, got {len} elements")]
    NonScalarRoot { len: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("empty input: {0}")]
    Empty(&'static str),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape {
        op,
        detail: detail.into(),
    }
}
