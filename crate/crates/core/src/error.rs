use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = FameError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum FameError {
    /// Operand shapes do not fit the operation.
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A caller-side precondition was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// NaN/Inf or a degenerate denominator.
    #[error("numeric error in {op}: {detail}")]
    Numeric { op: &'static str, detail: String },

    #[error("format error at byte {offset}: {detail}")]
    Format { offset: u64, detail: String },

    #[error("config error for `{key}`: {detail}")]
    Config { key: String, detail: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl FameError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        FameError::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn numeric(op: &'static str, detail: impl Into<String>) -> Self {
        FameError::Numeric {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn config(key: impl Into<String>, detail: impl Into<String>) -> Self {
        FameError::Config {
            key: key.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        FameError::Io {
            path: path.into(),
            source,
        }
    }
}
