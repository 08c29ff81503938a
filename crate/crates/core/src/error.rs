use std::path::PathBuf;

use thiserror::Error;

/// Failure reported by a scoring backend.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    /// Worth retrying: connection resets, timeouts, 5xx, 429.
    #[error("transient backend failure: {0}")]
    Transient(String),
    #[error("backend rejected request ({code}): {message}")]
    Permanent { code: String, message: String },
}

impl BackendError {
    pub fn is_transient(&self) -> bool {
        matches!(self, BackendError::Transient(_))
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid UTF-8 at byte offset {offset}")]
    InvalidUtf8 { offset: u64 },

    #[error("corpus contains no tokens")]
    EmptyCorpus,

    #[error("in-train intersection has {0} names, at least 2 are required")]
    TooFewInTrain(usize),

    #[error("need {needed} out-of-train names but only {available} are available")]
    InsufficientNegatives { needed: usize, available: usize },

    #[error("prompt {id}: {message}")]
    Prompt { id: String, message: String },

    #[error("duplicate prompt id {0:?}")]
    DuplicatePromptId(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("no model tokens inside the name span {start}..{end}")]
    NoNameTokens { start: usize, end: usize },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{count} confidence cells missing (first: {first})")]
    MissingCells { count: usize, first: String },

    #[error("statistic undefined: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Backend(#[from] BackendError),

    #[error("scoring aborted after {completed} completed cells: {source}")]
    Aborted {
        completed: usize,
        #[source]
        source: BackendError,
    },

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("missing artifact {path}; run `{stage}` first")]
    MissingArtifact { path: PathBuf, stage: &'static str },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
