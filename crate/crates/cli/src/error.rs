use std::path::PathBuf;

use cwm::CwmError;

/// Process exit status for a usage error (bad flag combination or value).
pub const EXIT_USAGE: u8 = 2;
/// Input could not be read or parsed, or is inconsistent.
pub const EXIT_DATA: u8 = 3;
/// Fitting failed because every start degenerated.
pub const EXIT_DEGENERATE: u8 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}, line {line}: {message}")]
    Parse { path: String, line: u64, message: String },
    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: String, column: String },
    #[error("{0}")]
    Data(String),
    #[error("degenerate fit: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Model(CwmError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Degenerate(_) => EXIT_DEGENERATE,
            CliError::Model(CwmError::Degenerate(_)) => EXIT_DEGENERATE,
            CliError::Model(CwmError::InvalidParameter(_)) => EXIT_USAGE,
            _ => EXIT_DATA,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

impl From<CwmError> for CliError {
    fn from(e: CwmError) -> Self {
        CliError::Model(e)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
