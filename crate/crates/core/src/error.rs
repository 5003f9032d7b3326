use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure class, used by the command line to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Store,
    Data,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Usage => 1,
            ErrorClass::Store => 2,
            ErrorClass::Data => 3,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("sample for `{name}` out of range: {value} not in [{min}, {max}]")]
    OutOfRange {
        name: String,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("non-finite sample for `{name}`")]
    NonFinite { name: String },

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("total-time variable `{0}` has no valid samples")]
    MissingTotalTime(String),

    #[error("baseline total time must be positive, got {0}")]
    NonPositiveBaseline(f64),

    #[error("no baseline recorded; run the reference execution with AITUNING_FIRST_RUN=1")]
    MissingBaseline,

    #[error("baseline already recorded")]
    BaselineExists,

    #[error("store already initialized at {}", .0.display())]
    AlreadyInitialized(PathBuf),

    #[error("no store at {}", .0.display())]
    Uninitialized(PathBuf),

    #[error("store corrupt: {0}")]
    Corrupt(String),

    #[error("store at {} is locked by another process", .0.display())]
    Locked(PathBuf),

    #[error("insufficient runs: have {have}, need at least {need}")]
    InsufficientRuns { have: usize, need: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("I/O error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidArgument(_) => ErrorClass::Usage,
            Error::Parse { .. }
            | Error::Invariant(_)
            | Error::OutOfRange { .. }
            | Error::NonFinite { .. }
            | Error::UnknownVariable(_)
            | Error::DimensionMismatch { .. }
            | Error::MissingTotalTime(_)
            | Error::NonPositiveBaseline(_) => ErrorClass::Data,
            Error::MissingBaseline
            | Error::BaselineExists
            | Error::AlreadyInitialized(_)
            | Error::Uninitialized(_)
            | Error::Corrupt(_)
            | Error::Locked(_)
            | Error::InsufficientRuns { .. }
            | Error::Io { .. } => ErrorClass::Store,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }
}
