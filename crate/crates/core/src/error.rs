use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    UnknownToken { id: usize, vocab: usize },

    #[error("zero-norm embedding at {0}")]
    ZeroNorm(String),

    #[error("non-finite value in `{0}`")]
    NonFinite(String),

    #[error("decoder absent: reconstruction is disabled in this model")]
    DecoderAbsent,

    #[error("loss weight `{0}` is non-zero but the component is absent")]
    AbsentComponent(&'static str),

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {term}")]
    Diverged {
        epoch: usize,
        batch: usize,
        term: String,
    },

    #[error("subset size {m} exceeds pool size {n}")]
    SubsetTooLarge { m: usize, n: usize },

    #[error("no multi-event samples available")]
    NoMultiEvent,

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("sample `{id}`: {reason}")]
    Sample { id: String, reason: String },

    #[error("missing motion blob for sample `{id}`: {path}")]
    MissingBlob { id: String, path: PathBuf },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("transport error: {0}")]
    Transport(String),

    #[error("unparseable response: {0}")]
    Unparseable(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn shape(context: impl Into<String>, expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
