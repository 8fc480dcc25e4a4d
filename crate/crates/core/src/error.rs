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

    /// Malformed input document. `location` is the JSON path of the offending
    /// field, `line`/`column` point into the source text.
    #[error("parse error in {what} at {location} (line {line}, column {column}): {message}")]
    Parse {
        what: &'static str,
        location: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("invalid dialogue {dialogue}{}: {reason}", turn.map(|t| format!(" turn {t}")).unwrap_or_default())]
    Invariant {
        dialogue: String,
        turn: Option<usize>,
        reason: String,
    },

    #[error("invalid lexicon: {0}")]
    Lexicon(String),

    #[error("invalid database: {0}")]
    Database(String),

    #[error("lexicon closure violation: no substitution for ({lexeme}, {target})")]
    ClosureViolation { lexeme: String, target: String },

    #[error("metric input error: {0}")]
    Metric(String),

    #[error("backend error: {0}")]
    Backend(#[from] BackendError),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("failed to write output: {0}")]
    Output(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(what: &'static str, err: serde_path_to_error::Error<serde_json::Error>) -> Self {
        let location = err.path().to_string();
        let inner = err.inner();
        Error::Parse {
            what,
            location,
            line: inner.line(),
            column: inner.column(),
            message: inner.to_string(),
        }
    }

    /// True for errors caused by bad input data rather than the environment.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::EmptyCorpus
                | Error::Invariant { .. }
                | Error::Lexicon(_)
                | Error::Database(_)
                | Error::ClosureViolation { .. }
                | Error::Config(_)
        )
    }
}

/// Failure of a model backend for a single request.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    #[error("request to {endpoint} timed out")]
    Timeout { endpoint: String },
    #[error("transport error talking to {endpoint}: {message}")]
    Transport { endpoint: String, message: String },
    #[error("{endpoint} returned HTTP {status}: {body}")]
    Status {
        endpoint: String,
        status: u16,
        body: String,
    },
    #[error("malformed response from {endpoint}: {message}")]
    Protocol { endpoint: String, message: String },
    #[error("mock backend failure: {0}")]
    Mock(String),
}
