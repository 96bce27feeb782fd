//! Error type shared by formats, configuration, and commands, with the
//! process exit-code mapping: 0 success, 2 usage/config, 3 I/O/format,
//! 4 numeric/training.

use std::path::PathBuf;

use wmrl_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Core(#[from] CoreError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message} (at byte {offset})")]
    Format { path: PathBuf, offset: usize, message: String },
    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> CliError {
        CliError::Io { path: path.into(), source }
    }

    pub fn usage(message: impl Into<String>) -> CliError {
        CliError::Usage(message.into())
    }

    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(CoreError::Config(_)) | CliError::Core(CoreError::Shape { .. }) => 2,
            CliError::Io { .. } | CliError::Format { .. } => 3,
            CliError::Core(CoreError::Training(_)) | CliError::Core(CoreError::Numeric(_)) => 4,
        }
    }
}
