use std::path::PathBuf;

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
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("line {line}: missing required field `{field}`")]
    MissingField { line: usize, field: String },

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("query `{qid}` references unknown record `{id}`")]
    DanglingReference { qid: String, id: String },

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("embeddings do not cover the corpus (missing: {missing:?}, extra: {extra:?})")]
    Coverage {
        missing: Vec<String>,
        extra: Vec<String>,
    },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{stage} failed for query `{qid}`: {source}")]
    Stage {
        stage: &'static str,
        qid: String,
        #[source]
        source: Box<Error>,
    },

    #[error("scoring candidate `{candidate}` failed: {source}")]
    Candidate {
        candidate: String,
        #[source]
        source: BackendError,
    },

    #[error(transparent)]
    Backend(#[from] BackendError),

    #[error("{failed} of {total} queries failed, above the allowed rate {cap}")]
    FailureRate {
        failed: usize,
        total: usize,
        cap: f64,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

/// Failure reported by a model backend, local or remote.
#[derive(Debug, Clone, thiserror::Error)]
pub enum BackendError {
    #[error("transport error talking to {endpoint}: {message}")]
    Transport { endpoint: String, message: String },

    #[error("backend returned a malformed response: {0}")]
    Protocol(String),

    #[error("backend rejected the request: {0}")]
    Rejected(String),
}
