use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("ingest failed: {0}")]
    Ingest(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("missing verdict for pair {0}")]
    MissingVerdict(String),

    #[error("unresolved review candidates: {}", .0.join(", "))]
    UnresolvedCandidates(Vec<String>),

    #[error("unknown pair id {0}")]
    UnknownPair(String),

    #[error("duplicate prediction for pair {0}")]
    DuplicatePrediction(String),

    #[error("answerer failed: {0}")]
    Answerer(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown stage `{0}`")]
    UnknownStage(String),

    #[error("hash mismatch for {name}: manifest has {expected}, file has {actual}")]
    HashMismatch {
        name: String,
        expected: String,
        actual: String,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable code, used in CLI error output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Ingest(_) => "ingest",
            Error::Precondition(_) => "precondition",
            Error::InvalidData(_) => "invalid_data",
            Error::MissingVerdict(_) => "missing_verdict",
            Error::UnresolvedCandidates(_) => "unresolved_candidates",
            Error::UnknownPair(_) => "unknown_pair",
            Error::DuplicatePrediction(_) => "duplicate_prediction",
            Error::Answerer(_) => "answerer",
            Error::Config(_) => "config",
            Error::UnknownStage(_) => "usage",
            Error::HashMismatch { .. } => "hash_mismatch",
        }
    }
}
