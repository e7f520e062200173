use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CgcError>;

/// What went wrong while reading a TUDataset corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FormatIssue {
    Missing,
    IndicatorMismatch,
    Parse,
}

impl std::fmt::Display for FormatIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FormatIssue::Missing => write!(f, "missing"),
            FormatIssue::IndicatorMismatch => write!(f, "indicator mismatch"),
            FormatIssue::Parse => write!(f, "parse"),
        }
    }
}

#[derive(Debug, Error)]
pub enum CgcError {
    #[error("format error ({issue}) in {path}: {detail}")]
    Format {
        issue: FormatIssue,
        path: PathBuf,
        detail: String,
    },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("degenerate fold {fold}: training split contains a single class")]
    DegenerateFold { fold: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CgcError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CgcError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(issue: FormatIssue, path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        CgcError::Format {
            issue,
            path: path.into(),
            detail: detail.into(),
        }
    }

    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            CgcError::Config(_) => 2,
            CgcError::Format { .. } | CgcError::EmptyDataset | CgcError::Io { .. } | CgcError::Checkpoint(_) => 3,
            CgcError::Numeric(_) | CgcError::Shape(_) | CgcError::DegenerateFold { .. } => 4,
        }
    }
}
