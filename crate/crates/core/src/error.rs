use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A tensor axis did not have the size an operation required.
    #[error("dimension mismatch in {context}: axis `{axis}` expected {expected}, got {actual}")]
    Dimension {
        context: String,
        axis: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("precondition violated in {context}: {message}")]
    Precondition { context: String, message: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("parameter `{name}` has shape {found:?}, model expects {expected:?}")]
    ParamShape {
        name: String,
        expected: [usize; 4],
        found: [usize; 4],
    },

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("missing parameter `{0}`")]
    MissingParam(String),

    /// `line` is 1-based; 0 means the problem is not tied to a line.
    #[error("config error{}: {message}", at_line(*line))]
    Config { line: usize, message: String },

    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(
        context: impl Into<String>,
        axis: &'static str,
        expected: usize,
        actual: usize,
    ) -> Self {
        Error::Dimension {
            context: context.into(),
            axis,
            expected,
            actual,
        }
    }

    pub(crate) fn pre(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Precondition {
            context: context.into(),
            message: message.into(),
        }
    }

    pub(crate) fn data(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Data {
            path: path.into(),
            message: message.into(),
        }
    }
}

fn at_line(line: usize) -> String {
    if line == 0 {
        String::new()
    } else {
        format!(" at line {line}")
    }
}
