use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("undefined statistic: {0}")]
    Undefined(String),

    #[error("signal of {samples} samples is shorter than the {window}-sample window")]
    SignalTooShort { samples: usize, window: usize },

    #[error("branch {0} missing from model artifacts")]
    MissingBranch(String),

    #[error("invalid cohort spec: {0}")]
    InvalidSpec(String),

    #[error("{path}: {malformed} of {total} lines malformed (first at line {first_line})")]
    TooManyMalformed {
        path: PathBuf,
        malformed: usize,
        total: usize,
        first_line: usize,
    },

    #[error("single-class outcome for {0}")]
    SingleClass(String),

    #[error("config: {0}")]
    Config(String),

    #[error("missing prerequisite artifact {path} (run `{stage}` first)")]
    MissingArtifact { stage: String, path: PathBuf },

    #[error("artifact chain mismatch: {0}")]
    ChainMismatch(String),

    #[error("parse error in {path} line {line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
