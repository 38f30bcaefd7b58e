use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic in {0}: not a MIXMAT01 matrix file")]
    BadMagic(PathBuf),

    #[error("truncated payload in {path}: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("malformed matrix file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("inconsistent gram matrix: {0}")]
    InconsistentGram(String),

    #[error("ambiguous public support: coordinates {0} and {1} tie at the selection boundary")]
    AmbiguousSupport(usize, usize),

    #[error("input is not a line graph")]
    NotLineGraph,

    #[error("line graph is disconnected ({components} components)")]
    Disconnected { components: usize },

    #[error("internal inconsistency: {0}")]
    Internal(String),

    #[error("resource guard: {0}")]
    ResourceLimit(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
