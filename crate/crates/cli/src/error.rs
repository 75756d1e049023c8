use std::fmt;
use std::path::Path;

use coordconv_core::Error;

/// Failure of a subcommand, carrying the process exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, files or combinations: exit 2.
    Usage(String),
    /// Training produced a non-finite value: exit 3.
    Diverged(String),
    /// One or more selftest checks failed: exit 4.
    Check(String),
    /// Anything else (I/O, corrupt artifacts): exit 1.
    Failed(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Diverged(_) => 3,
            CliError::Check(_) => 4,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn io(path: &Path, err: impl fmt::Display) -> Self {
        CliError::Failed(format!("{}: {err}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Diverged(m) => write!(f, "diverged: {m}"),
            CliError::Check(m) => write!(f, "selftest failed: {m}"),
            CliError::Failed(m) => write!(f, "{m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Diverged { .. } | Error::NonFinite { .. } => CliError::Diverged(e.to_string()),
            Error::InvalidArgument(_) | Error::UnknownModel(_) => CliError::Usage(e.to_string()),
            other => CliError::Failed(other.to_string()),
        }
    }
}
