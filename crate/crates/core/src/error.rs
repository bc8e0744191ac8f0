use thiserror::Error;

/// Unified error type for the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("bounding box out of range: {0}")]
    BoxOutOfRange(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("axis {axis} of node `{node}` has odd extent {size}; input must be divisible by 2^(depth-1) per axis")]
    IndivisibleAxis { node: String, axis: char, size: usize },

    #[error("graph error: {0}")]
    Graph(String),

    #[error("distance transform of an empty mask is infinite everywhere")]
    EmptyMask,

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("phantom generation failed: {0}")]
    Generation(String),

    #[error("training diverged at epoch {epoch}: {value} is not finite")]
    Diverged { epoch: usize, value: f64 },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("format error in {path}: {message}")]
    Format { path: String, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
