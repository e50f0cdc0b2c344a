use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("duplicate subject id `{0}`")]
    DuplicateSubject(String),

    #[error("duplicate feature set id `{0}`")]
    DuplicateFeatureSet(String),

    #[error("unknown feature set `{0}`")]
    UnknownFeatureSet(String),

    #[error("subject universe mismatch: {0}")]
    SubjectMismatch(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("both classes must be present: {0}")]
    SingleClass(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
