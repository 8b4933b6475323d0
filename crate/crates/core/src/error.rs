use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-unit-norm vector in passage {passage_id} row {row}: norm {norm}")]
    NonUnitNorm { passage_id: u64, row: usize, norm: f32 },

    #[error("truncated file: {0}")]
    TruncatedFile(String),

    #[error("malformed input: {0}")]
    MalformedInput(String),

    #[error("{}:{line}: malformed line: {reason}", path.display())]
    MalformedLine { path: PathBuf, line: usize, reason: String },

    #[error("insufficient sample: need at least {needed} vectors, got {got}")]
    InsufficientSample { needed: usize, got: usize },

    #[error("corrupt residual code: expected {expected} bytes, got {got}")]
    CorruptCode { expected: usize, got: usize },

    #[error("centroid id {id} out of range for {n_centroids} centroids")]
    CentroidOutOfRange { id: u32, n_centroids: usize },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("malformed index ({file}): {reason}")]
    MalformedIndex { file: String, reason: String },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("no scored query appears in the qrels")]
    EmptyIntersection,

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("empty input")]
    EmptyInput,

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn index(file: &str, reason: impl Into<String>) -> Self {
        Error::MalformedIndex { file: file.to_string(), reason: reason.into() }
    }

    /// Whether the failure came from the filesystem rather than from the
    /// content of an input.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
