use std::path::PathBuf;

use thiserror::Error;

/// Every fallible operation in the crate reports one of these.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON at {location}: {message}")]
    Json { location: String, message: String },

    #[error("duplicate post id {0:?}")]
    DuplicatePostId(String),

    #[error("no hashtag group has at least two posts; hashtag pairs cannot be formed")]
    NoPairableHashtag,

    #[error("token id {id} at batch row {row}, position {position} is out of range for vocab size {vocab_size}")]
    TokenOutOfRange {
        row: usize,
        position: usize,
        id: u32,
        vocab_size: usize,
    },

    #[error("sequence of length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("position ({row}, {position}) is outside the unmasked tokens of the batch")]
    PositionOutOfBounds { row: usize, position: usize },

    #[error("forward cache does not match the parameters: {0}")]
    CacheMismatch(String),

    #[error("non-finite loss {value} in batch {batch_ids:?}")]
    NonFiniteLoss { value: f64, batch_ids: Vec<String> },

    #[error("encoder digest mismatch: index built with {expected}, active encoder is {found}")]
    DigestMismatch { expected: String, found: String },

    #[error("checkpoint config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("invalid file format: {0}")]
    Format(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(location: impl Into<String>, err: serde_json::Error) -> Self {
        Error::Json {
            location: location.into(),
            message: err.to_string(),
        }
    }
}
