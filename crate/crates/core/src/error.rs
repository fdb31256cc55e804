use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid product id {0:?}: {1}")]
    InvalidProductId(String, &'static str),

    #[error("invalid session id {0:?}: {1}")]
    InvalidSessionId(String, &'static str),

    #[error("invalid category path for {product}: {reason}")]
    InvalidCategory { product: String, reason: String },

    #[error("invalid session {session_id}: {reason}")]
    InvalidSession { session_id: String, reason: String },

    #[error("events are not sorted by timestamp at index {index}")]
    UnsortedEvents { index: usize },

    #[error("session gap must be positive, got {0}")]
    NonPositiveGap(i64),

    #[error("duplicate session id {0:?}")]
    DuplicateSessionId(String),

    #[error("product {product:?} referenced by session {session_id:?} is missing from the catalog")]
    MissingCatalogEntry { session_id: String, product: String },

    #[error("session {0:?} not found")]
    SessionNotFound(String),

    #[error("product {product:?} has no category at level {level}")]
    MissingCategoryLevel { product: String, level: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("co-occurrence count for ({0}, {1}) would drop below zero")]
    CorruptedMatrix(String, String),

    #[error("vocabulary is empty after applying min_count = {0}")]
    EmptyVocabulary(u64),

    #[error("revenue per session is undefined for zero sessions")]
    ZeroSessions,

    #[error("relative change is undefined for a zero baseline conversion rate")]
    UndefinedBaseline,

    #[error("toxic plant failed after {0} attempts")]
    PlantFailed(usize),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error(
        "vector recommender leave-one-out over {n_sessions} sessions is intractable (limit {limit}); provide a sample"
    )]
    Intractable { n_sessions: usize, limit: usize },

    #[error("day grid entry {0} produced an empty slice")]
    EmptySlice(u32),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
