//! Crate-wide error type.

use thiserror::Error;

use crate::graph::EntryId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("entry {0} already exists")]
    DuplicateId(EntryId),

    #[error("entry {0} not found")]
    UnknownEntry(EntryId),

    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("embedding is not unit-normalized (norm {0})")]
    NotUnitNorm(f64),

    #[error("non-finite embedding component")]
    NonFiniteEmbedding,

    #[error("unsupported persistence schema {found:?} (expected {expected:?})")]
    SchemaVersion { expected: String, found: String },

    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("provider returned an unparseable response: {0}")]
    ProviderParse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
