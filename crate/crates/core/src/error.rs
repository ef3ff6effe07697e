use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand extents are incompatible.
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// A configuration value violates a structural constraint.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Input data is unusable (empty scale, non-finite features, ...).
    #[error("input error: {0}")]
    Input(String),

    /// A binary container is malformed.
    #[error("format error at byte {offset}: {detail}")]
    Format { offset: u64, detail: String },

    /// A text manifest line could not be parsed.
    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    /// A statistic has no defined value for the given data.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}, slide {slide}: loss = {loss}")]
    Divergence { epoch: usize, slide: String, loss: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// An error raised while reading a particular file.
    #[error("{path}: {source}")]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension { op, detail: detail.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn in_file(path: impl Into<PathBuf>, source: Error) -> Self {
        match source {
            e @ (Error::Io { .. } | Error::InFile { .. }) => e,
            e => Error::InFile { path: path.into(), source: Box::new(e) },
        }
    }

    pub(crate) fn format(offset: u64, detail: impl Into<String>) -> Self {
        Error::Format { offset, detail: detail.into() }
    }
}
