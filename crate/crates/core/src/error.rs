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

    #[error("malformed MRC file: field `{field}`: {reason}")]
    Format { field: &'static str, reason: String },

    #[error("unsupported MRC mode {0} (only mode 2, 32-bit float, is supported)")]
    UnsupportedMode(i32),

    #[error("parse error on line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("model contains no atom records")]
    EmptyModel,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("placement infeasible: {0}")]
    PlacementInfeasible(String),

    #[error("placement error for instance {index}: {reason}")]
    Placement { index: usize, reason: String },

    #[error("no density registered for class `{0}`")]
    MissingClass(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("underdetermined: {0}")]
    Underdetermined(String),

    #[error("tilt {index}: {source}")]
    AtTilt {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            field,
            reason: reason.into(),
        }
    }

    /// True when the root cause is a filesystem failure.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io { .. } => true,
            Error::AtTilt { source, .. } | Error::Stage { source, .. } => source.is_io(),
            _ => false,
        }
    }
}
