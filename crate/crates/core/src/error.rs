use std::path::PathBuf;

use densecap_nn::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("invalid value for `{field}`: {reason}")]
    InvalidSpec { field: String, reason: String },
    #[error("corpus: {0}")]
    Corpus(String),
    #[error("corpus: video `{id}`: {reason}")]
    CorpusVideo { id: String, reason: String },
    #[error("malformed interval [{start}, {end}]")]
    Interval { start: i64, end: i64 },
    #[error("empty candidate set; fall back to an empty event sequence")]
    EmptyCandidates,
    #[error("missing prerequisite: {}", .0.display())]
    MissingPrerequisite(PathBuf),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("config: {0}")]
    Config(String),
    #[error("dump: {0}")]
    Dump(String),
    #[error("vocabulary mismatch between checkpoint and corpus")]
    VocabMismatch,
    #[error("{what} already exists: {} (use --force to overwrite)", .path.display())]
    Exists { what: &'static str, path: PathBuf },
}

pub type Result<T> = std::result::Result<T, Error>;
