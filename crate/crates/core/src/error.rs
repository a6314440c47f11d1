use std::io;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
///
/// The CLI maps these onto process exit codes with [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (out-of-range id, bad shape).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid configuration value or combination.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed input data. `line` is 1-based and counts the header row.
    #[error("schema error at line {line}: {message}")]
    Schema { line: usize, message: String },

    /// Records were not sorted by timestamp.
    #[error("records out of order at index {index}: {current} < {previous}")]
    Ordering {
        index: usize,
        previous: f64,
        current: f64,
    },

    /// A grid could not be built because the samples span no range.
    #[error("degenerate sample range: {0}")]
    DegenerateRange(String),

    /// A computation produced a non-finite value or failed to factorize.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// AUC is undefined when only one class is present.
    #[error("AUC undefined: {0}")]
    UndefinedAuc(String),

    /// A stream statistic would overflow its 64-bit counter.
    #[error("count overflow in {0}")]
    Overflow(&'static str),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn schema(line: usize, message: impl Into<String>) -> Self {
        Error::Schema {
            line,
            message: message.into(),
        }
    }

    /// Process exit code: 2 for schema/configuration problems, 3 for numeric
    /// failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Schema { .. }
            | Error::Config(_)
            | Error::Ordering { .. }
            | Error::Json(_)
            | Error::Contract(_) => 2,
            Error::Numeric(_) | Error::DegenerateRange(_) | Error::Overflow(_) => 3,
            Error::UndefinedAuc(_) | Error::Io(_) => 1,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        let line = e
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or_default();
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            kind => Error::schema(line, format!("{kind:?}")),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
