use std::path::PathBuf;

use besvm::ErrorKind;
use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] besvm::Error),

    #[error("unparseable measure label {0:?}: expected H<cell>L, H<cell>R or H<cell>(h_R,h_L)")]
    Label(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    ConfigFile {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    ConfigJson {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl CliError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Label(_)
            | CliError::Config(_)
            | CliError::ConfigFile { .. }
            | CliError::ConfigJson { .. } => ErrorKind::Usage,
            CliError::Io { .. } | CliError::Csv { .. } => ErrorKind::Data,
        }
    }

    /// Process exit status: 1 usage, 2 data, 3 numerical.
    pub fn exit_code(&self) -> u8 {
        match self.kind() {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Numerical => 3,
        }
    }
}
