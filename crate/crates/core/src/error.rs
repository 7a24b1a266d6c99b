use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-kana character {ch:?} at position {pos}")]
    NotKana { ch: char, pos: usize },

    #[error("long-vowel mark at position {pos} has no preceding vowel")]
    DanglingLongVowel { pos: usize },

    #[error("accent notation error at position {pos}: {reason}")]
    Notation { pos: usize, reason: String },

    #[error("accent alternation violated at index {index}")]
    Alternation { index: usize },

    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),

    #[error("{}:{line}: {reason}", .path.display())]
    Malformed {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("position {pos} out of range for input of {len} characters")]
    OutOfRange { pos: usize, len: usize },

    #[error("unknown connection id (right {right}, left {left})")]
    UnknownConnection { right: u16, left: u16 },

    #[error("empty input")]
    EmptyInput,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("not enough nouns in lexicon (need 2, found {0})")]
    InsufficientNouns(usize),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
