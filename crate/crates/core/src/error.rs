use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file does not follow its declared layout.
    #[error("format error in {file} at byte {offset}: {message}")]
    Format {
        file: String,
        offset: u64,
        message: String,
    },

    /// Cross-references between records do not resolve.
    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("batch composition error: {0}")]
    BatchComposition(String),

    #[error("undefined statistic: {0}")]
    Undefined(String),

    /// Non-finite value inside a forward pass.
    #[error("numeric error in {location}: {message}")]
    Numeric { location: String, message: String },

    #[error("training diverged in stage `{stage}` at step {step}: loss = {loss}")]
    Diverged { stage: String, step: usize, loss: f64 },

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(file: impl Into<String>, offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            file: file.into(),
            offset,
            message: message.into(),
        }
    }

    /// True for failures caused by numbers rather than by inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Numeric { .. } | Error::Diverged { .. } | Error::Degenerate(_)
        )
    }
}
