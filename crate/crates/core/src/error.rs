use std::path::PathBuf;

/// Errors raised anywhere in the engine.
///
/// The variants line up with the CLI exit codes: argument and data problems
/// exit with 2, numerical breakdowns with 3 and filesystem failures with 4.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_) | Error::Contract(_) | Error::Validation(_) | Error::Parse(_) => 2,
            Error::Numeric(_) => 3,
            Error::Io { .. } => 4,
        }
    }

    /// Prefix the message with the subject it concerns.
    pub fn for_subject(self, id: &str) -> Self {
        match self {
            Error::Domain(m) => Error::Domain(format!("subject {id}: {m}")),
            Error::Contract(m) => Error::Contract(format!("subject {id}: {m}")),
            Error::Numeric(m) => Error::Numeric(format!("subject {id}: {m}")),
            Error::Validation(m) => Error::Validation(format!("subject {id}: {m}")),
            other => other,
        }
    }
}
