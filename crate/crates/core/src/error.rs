use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error classes, used by the CLI for exit codes and
/// machine-readable error output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Usage,
    Numerical,
    Integrity,
    State,
    Majority,
    Io,
}

impl ErrorCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Config => "config",
            ErrorCategory::Usage => "usage",
            ErrorCategory::Numerical => "numerical",
            ErrorCategory::Integrity => "integrity",
            ErrorCategory::State => "state",
            ErrorCategory::Majority => "majority",
            ErrorCategory::Io => "io",
        }
    }

    pub fn exit_code(self) -> u8 {
        match self {
            ErrorCategory::Config => 2,
            ErrorCategory::Usage => 3,
            ErrorCategory::Numerical => 4,
            ErrorCategory::Integrity => 5,
            ErrorCategory::State => 6,
            ErrorCategory::Majority => 7,
            ErrorCategory::Io => 8,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("state error: {0}")]
    State(String),
    #[error("benign-majority violation: {malicious} of {total} clients flagged malicious")]
    MajorityViolation { malicious: usize, total: usize },
    #[error("undefined similarity: {0}")]
    UndefinedSimilarity(String),
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) => ErrorCategory::Config,
            Error::Usage(_) => ErrorCategory::Usage,
            Error::Numerical(_) | Error::UndefinedSimilarity(_) => ErrorCategory::Numerical,
            Error::Integrity(_) => ErrorCategory::Integrity,
            Error::State(_) => ErrorCategory::State,
            Error::MajorityViolation { .. } => ErrorCategory::Majority,
            Error::Io { .. } | Error::Format { .. } => ErrorCategory::Io,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
