use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImsvdError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("{op}: non-finite value ({detail})")]
    Numeric { op: &'static str, detail: String },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("invalid block layout: {0}")]
    Layout(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ImsvdError {
    pub fn contract(msg: impl Into<String>) -> Self {
        ImsvdError::Contract(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        ImsvdError::Format(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ImsvdError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, ImsvdError>;
