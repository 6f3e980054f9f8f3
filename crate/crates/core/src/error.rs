use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: u64,
        message: String,
    },

    #[error("{context}: {message}")]
    Invariant { context: String, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("token absent from corpus: {0:?}")]
    UnknownToken(String),

    #[error("degenerate topic {0}: fewer than 2 usable keywords")]
    DegenerateTopic(String),

    #[error("degenerate topic vector")]
    DegenerateVector,

    #[error("keyword {token:?} of topic {topic} has no embedding")]
    MissingEmbedding { topic: String, token: String },

    #[error("nothing to evaluate: {0}")]
    NothingToEvaluate(String),

    #[error("covariate design never feasible: {0}")]
    NeverFeasible(String),

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

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

    pub(crate) fn parse(file: impl Into<String>, line: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            file: file.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn invariant(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invariant {
            context: context.into(),
            message: message.into(),
        }
    }
}
