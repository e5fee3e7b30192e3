use std::io;

use thiserror::Error;

use crate::TokenId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad classification used by front-ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// The caller handed us something unusable (missing file, bad JSON, bad argument).
    Input,
    /// Inputs parsed, but a structural invariant does not hold.
    Validation,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed document: {0}")]
    Malformed(String),

    #[error("duplicate token string {0:?}")]
    DuplicateToken(String),

    #[error("non-dense token ids: {0}")]
    NonDenseIds(String),

    #[error("merge at rank {rank} references unknown token {token:?}")]
    UnknownMergeToken { rank: usize, token: String },

    #[error("dangling merge result {result:?} at rank {rank}")]
    DanglingMergeResult { rank: usize, result: String },

    #[error("invalid merge at rank {rank}: {reason}")]
    InvalidMerge { rank: usize, reason: String },

    #[error("token id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: TokenId, size: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cycle detected in merge graph at token {0}")]
    Cycle(TokenId),

    #[error("embedding matrix: {0}")]
    Embedding(String),

    #[error("every token is excluded from the norm population")]
    EmptyPopulation,

    #[error("surgery plan: {0}")]
    Plan(String),

    #[error("surgery validation failed: {0}")]
    SurgeryValidation(String),

    #[error("corpus too small: {0}")]
    CorpusTooSmall(String),

    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::SurgeryValidation(_) | Error::Cycle(_) => ErrorKind::Validation,
            _ => ErrorKind::Input,
        }
    }
}
