use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure category, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Model,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    Dimension {
        expected: usize,
        actual: usize,
        context: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: not a {expected} file (bad magic or version)")]
    BadMagic { path: PathBuf, expected: &'static str },

    #[error("{path}: malformed header: {reason}")]
    BadHeader { path: PathBuf, reason: String },

    #[error("truncated record at byte offset {offset}")]
    Truncated { offset: u64 },

    #[error("record #{position} has dimension {actual}, store dimension is {expected}")]
    RecordDimension {
        position: u64,
        expected: usize,
        actual: usize,
    },

    #[error("record (snippet {snippet_id}, line {line_index}) has a non-finite entry")]
    NonFinite { snippet_id: u32, line_index: u32 },

    #[error("duplicate record (snippet {snippet_id}, line {line_index})")]
    DuplicateRecord { snippet_id: u32, line_index: u32 },

    #[error("snippet {snippet_id} cannot be mutated: {reason}")]
    NotMutable { snippet_id: u32, reason: String },

    #[error("invalid snippet pair: {0}")]
    InvalidPair(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("list excluded: {0}")]
    Excluded(String),

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{path}: invalid model file: {reason}")]
    ModelFile { path: PathBuf, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::BadMagic { expected, .. } if *expected != "PTAS" => ErrorKind::Model,
            Error::ModelFile { .. } => ErrorKind::Model,
            _ => ErrorKind::Data,
        }
    }
}
