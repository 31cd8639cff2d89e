use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input file (bad header, wrong column count, missing/duplicate id).
    #[error("{path}:{line}: {message}")]
    Format { path: String, line: usize, message: String },

    /// A value was well-formed but not allowed (unknown language, unknown label, empty text).
    #[error("{0}")]
    Validation(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("inconsistent labels: {0}")]
    Consistency(String),

    #[error("translation of item {item_id} failed{}: {message}", if *.retriable { " (retriable)" } else { "" })]
    Transport {
        item_id: String,
        retriable: bool,
        message: String,
    },

    #[error("routing: {0}")]
    Routing(String),

    #[error("coverage: missing ids [{}]", .0.join(", "))]
    Coverage(Vec<String>),

    #[error("statistics: {0}")]
    Statistics(String),

    #[error("model load {path}: {message}")]
    Load { path: PathBuf, message: String },

    #[error("model: {0}")]
    Model(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short, stable name of the error class, printed by the command line tool.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Format { .. } => "format",
            Error::Validation(_) => "validation",
            Error::Argument(_) => "argument",
            Error::Config(_) => "config",
            Error::Consistency(_) => "consistency",
            Error::Transport { .. } => "transport",
            Error::Routing(_) => "routing",
            Error::Coverage(_) => "coverage",
            Error::Statistics(_) => "statistics",
            Error::Load { .. } => "load",
            Error::Model(_) => "model",
            Error::Io { .. } => "io",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: &str, line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.to_string(),
            line,
            message: message.into(),
        }
    }
}

impl From<candle_core::Error> for Error {
    fn from(e: candle_core::Error) -> Self {
        Error::Model(e.to_string())
    }
}
