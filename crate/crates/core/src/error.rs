use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("tensor `{tensor}` byte range {offset}..{end} exceeds file length {file_len}")]
    OffsetOutOfRange {
        tensor: String,
        offset: u64,
        end: u64,
        file_len: u64,
    },

    #[error("layer dims do not chain: `{prev}` outputs {out_dim} but `{next}` expects {in_dim}")]
    DimChain {
        prev: String,
        out_dim: usize,
        next: String,
        in_dim: usize,
    },

    #[error("tensor `{0}` contains a non-finite value")]
    NonFinite(String),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("non-finite activation produced by layer `{0}`")]
    Numeric(String),

    #[error("architecture mismatch: {0}")]
    Architecture(String),

    #[error("normal matrix for {context} is singular; use a ridge penalty lambda > 0")]
    Singular { context: String },

    #[error("training diverged at step {step} (loss is not finite); try a smaller learning rate")]
    Divergence { step: usize },

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(
        context: impl Into<String>,
        expected: impl std::fmt::Display,
        actual: impl std::fmt::Display,
    ) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::Invalid(message.into())
    }

    /// True for failures of the filesystem rather than of the inputs.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
