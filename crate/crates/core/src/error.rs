use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: expected `head<TAB>relation<TAB>tail`, found {found} field(s)")]
    MalformedTriple { path: PathBuf, line: usize, found: usize },

    #[error("{path}:{line}: empty entity or relation name")]
    EmptyName { path: PathBuf, line: usize },

    #[error("training split is empty")]
    EmptyTrainSplit,

    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("unknown entity `{0}`")]
    UnknownEntity(String),

    #[error("unknown relation `{0}`")]
    UnknownRelation(String),

    #[error("id {id} out of range for {kind} vocabulary of size {len}")]
    IdOutOfRange { kind: &'static str, id: usize, len: usize },

    #[error("relation vocabulary is empty")]
    EmptyRelationVocabulary,

    #[error("rule `{0}` has no recognised traversal structure and cannot be grounded")]
    Unclassified(String),

    #[error("rule `{0}` references an unmapped relation")]
    UnmappedRule(String),

    #[error("backend `{0}` does not support this operation")]
    UnsupportedBackend(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("rank list is empty")]
    EmptyRanks,

    #[error("annotation score {0} is not one of 0, 0.5, 1")]
    InvalidAnnotation(f64),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("nothing to learn: {0}")]
    NothingToLearn(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format { what, detail: detail.into() }
    }
}
