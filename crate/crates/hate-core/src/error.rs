//! Error types shared across the crate.

use std::path::PathBuf;

use thiserror::Error;

/// Coarse classification used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad or missing input: unreadable files, parse failures, invalid
    /// configuration values, contexts that cannot be scored.
    Input,
    /// Artifacts that do not fit together: vocabulary or dimension
    /// mismatches, unsupported format versions.
    Compatibility,
    /// Non-finite values surfaced during training or scoring.
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no item survives the frequency threshold (min_count)")]
    EmptyVocabulary,

    #[error("no current transaction falls inside the last {recent_days} days")]
    NoRecentCandidates { recent_days: i64 },

    #[error("empty context: {0}")]
    EmptyContext(String),

    #[error("item index {index} out of range for vocabulary of {n_items} items")]
    IndexOutOfRange { index: u32, n_items: usize },

    #[error("inter-transaction context has {got} transactions, model expects {expected}")]
    InterWindowMismatch { got: usize, expected: usize },

    #[error("vocabulary mismatch between checkpoint and dataset")]
    VocabMismatch,

    #[error("bad magic bytes in {path}: not a {expected} file")]
    BadMagic { path: PathBuf, expected: String },

    #[error("unsupported format version {found} in {path}; supported versions: {supported}")]
    UnsupportedVersion {
        path: PathBuf,
        found: u32,
        supported: String,
    },

    #[error("file {path} is truncated or corrupt: {message}")]
    Corrupt { path: PathBuf, message: String },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },
}

impl Error {
    /// The coarse class this error belongs to.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::Config(_)
            | Error::EmptyVocabulary
            | Error::NoRecentCandidates { .. }
            | Error::EmptyContext(_)
            | Error::IndexOutOfRange { .. } => ErrorKind::Input,
            Error::InterWindowMismatch { .. }
            | Error::VocabMismatch
            | Error::BadMagic { .. }
            | Error::UnsupportedVersion { .. }
            | Error::Corrupt { .. } => ErrorKind::Compatibility,
            Error::NonFinite { .. } => ErrorKind::Numerical,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
