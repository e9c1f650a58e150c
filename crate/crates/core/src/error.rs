use std::path::PathBuf;

use crate::DocKind;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate {kind} id `{id}`")]
    DuplicateId { kind: DocKind, id: String },

    #[error("gold pair references unknown {kind} id `{id}`")]
    DanglingReference { kind: DocKind, id: String },

    #[error("invalid document `{id}`: {reason}")]
    InvalidDocument { id: String, reason: String },

    #[error("post `{0}` has no English translation but the English channel was requested")]
    MissingEnglish(String),

    #[error("unknown document id `{0}`")]
    UnknownId(String),

    #[error("embedding format: {0}")]
    Format(String),

    #[error("non-finite value in row `{id}` of the embedding matrix")]
    NonFinite { id: String },

    #[error("duplicate id `{0}` in embedding matrix")]
    DuplicateEmbeddingId(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("conflicting registration for model `{model_id}` ({channel}, {kind})")]
    RegistryConflict {
        model_id: String,
        channel: crate::Channel,
        kind: DocKind,
    },

    #[error("no embedding for document `{0}`")]
    MissingEmbedding(String),

    #[error("empty retrieval pool for post `{0}`")]
    EmptyPool(String),

    #[error("degenerate adapter: transformed vector norm below 1e-12")]
    DegenerateAdapter,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("need at least 2 training pairs, found {0}")]
    TooFewPairs(usize),

    #[error("non-finite loss at step {0}")]
    NonFiniteLoss(usize),

    #[error("post `{0}` has no gold fact-check")]
    NoGold(String),

    #[error("empty post set for cell `{0}`")]
    EmptyCell(String),

    #[error("ranking for post `{found}` mixed with rankings for post `{expected}`")]
    PostMismatch { expected: String, found: String },

    #[error("report for model `{0}` has no S@10 values")]
    MissingS10(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
