use std::path::{Path, PathBuf};

/// Failure of a CLI command. Each variant maps to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Malformed or inconsistent input files.
    #[error("{0}")]
    Schema(String),
    /// Valid input that cannot be processed numerically or is misconfigured.
    #[error("{0}")]
    Numeric(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Schema(_) | CliError::Io { .. } => 2,
            CliError::Numeric(_) => 3,
        }
    }

    pub fn schema(msg: impl Into<String>) -> Self {
        CliError::Schema(msg.into())
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl From<mfband::Error> for CliError {
    fn from(e: mfband::Error) -> Self {
        use mfband::Error as E;
        match e {
            E::InvalidGrid(_) | E::ShapeMismatch(_) | E::LayoutMismatch(_) | E::NonFinite(_) => {
                CliError::Schema(e.to_string())
            }
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
