use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by corpus handling, geometry, training, adaptation,
/// evaluation, and model persistence.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty vocabulary: all tokens filtered out")]
    EmptyVocabulary,

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("degenerate vector: zero norm")]
    DegenerateVector,

    #[error("degenerate document: no in-vocabulary tokens or vanishing mean")]
    DegenerateDocument,

    #[error("vector is not unit-norm (norm = {norm})")]
    NonUnitVector { norm: f64 },

    #[error("retraction singularity: step collapses the vector to zero")]
    RetractionSingularity,

    #[error("non-finite matrix entries")]
    NonFinite,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("index mismatch between embedding sets")]
    IndexMismatch,

    #[error("invalid id {id} (limit {limit})")]
    InvalidId { id: usize, limit: usize },

    #[error("{path}:{line}: malformed line (expected `label<TAB>text`)")]
    MalformedLine { path: PathBuf, line: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing bundle file: {0}")]
    MissingFile(PathBuf),

    #[error("corrupt bundle: {0}")]
    CorruptBundle(String),

    #[error("tokenizer options mismatch: model bundle used {expected}, corpus was prepared with {got}")]
    TokenizerMismatch { expected: String, got: String },

    #[error("model has no trained epochs")]
    UntrainedState,

    #[error("keyword linkage does not match model state: {0}")]
    LinkageMismatch(String),

    #[error("label/prediction length mismatch: {expected} vs {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("empty kNN training set")]
    EmptyTrainSet,

    #[error("too many degenerate documents: {degenerate} of {total}")]
    TooManyDegenerate { degenerate: usize, total: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
