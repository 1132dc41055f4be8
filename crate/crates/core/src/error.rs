use std::path::PathBuf;

/// Errors produced anywhere in the retrieval and verification pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: field `{field}`: {message}")]
    Record {
        line: usize,
        field: String,
        message: String,
    },

    #[error("line {line}: duplicate id `{id}`")]
    DuplicateId { line: usize, id: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown language `{0}`")]
    UnknownLanguage(String),

    #[error("article `{0}` has an empty title")]
    EmptyTitle(String),

    #[error("vocabulary is empty")]
    EmptyVocabulary,

    #[error("passage collection is empty")]
    EmptyCollection,

    #[error("passage `{passage}` refers to unknown article `{article}`")]
    OrphanPassage { passage: String, article: String },

    #[error("unknown passage `{0}`")]
    UnknownPassage(String),

    #[error("dataset has {len} pairs, fewer than the batch size {batch_size}")]
    DatasetTooSmall { len: usize, batch_size: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("fingerprint mismatch: index built for {expected}, checkpoint is {found}")]
    FingerprintMismatch { expected: String, found: String },

    #[error("correlation is undefined: {0}")]
    UndefinedCorrelation(&'static str),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn record(line: usize, field: &str, message: impl Into<String>) -> Self {
        Error::Record {
            line,
            field: field.to_string(),
            message: message.into(),
        }
    }
}
