use std::path::PathBuf;

use thiserror::Error;

use crate::tensor5::Shape5;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape {0:?}: every extent must be at least 1")]
    InvalidShape([usize; 5]),

    #[error("cannot allocate tensor of shape {0:?}")]
    Allocation([usize; 5]),

    #[error("shape mismatch in {op}: {left} vs {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape5,
        right: Shape5,
    },

    #[error("buffer of length {len} does not match shape {shape} ({expected} elements)")]
    BufferLength {
        shape: Shape5,
        len: usize,
        expected: usize,
    },

    #[error("channel mismatch in {op}: input has {got} channels, expected {expected}")]
    ChannelMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{op}: {msg}")]
    Geometry { op: &'static str, msg: String },

    #[error("architecture: {0}")]
    Arch(String),

    #[error("stale forward trace: {0}")]
    StaleTrace(String),

    #[error("optimizer state misaligned: {0}")]
    Misaligned(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {msg}")]
    Image { path: PathBuf, msg: String },

    #[error("{path}:{line}: {msg}")]
    Manifest {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn geometry(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Geometry {
            op,
            msg: msg.into(),
        }
    }
}
