use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Data(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Lib(#[from] fetopo::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 1 usage or configuration, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        use fetopo::Error as E;
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) | CliError::Io { .. } => 2,
            CliError::Lib(e) => match e {
                E::Config(_) | E::Topology(_) | E::FingerprintMismatch { .. } => 1,
                E::Numeric(_) => 3,
                E::InvalidInput(_) | E::Io(_) | E::Json(_) => 2,
            },
        }
    }
}
