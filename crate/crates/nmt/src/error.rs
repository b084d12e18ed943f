use std::path::{Path, PathBuf};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] nmt_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("run directory {0} is locked by another run (remove the lock file if stale)")]
    Locked(PathBuf),
    #[error("{0}")]
    Usage(String),
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    /// 1 for invalid input or configuration, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        use nmt_core::Error as C;
        match self {
            Error::Core(
                C::Config(_) | C::EmptyCorpus | C::IncompatibleCheckpoint(_) | C::InsufficientHistory { .. },
            ) => 1,
            Error::Parse { .. } | Error::Usage(_) | Error::Locked(_) => 1,
            _ => 2,
        }
    }
}

pub fn config_error(msg: impl Into<String>) -> Error {
    Error::Core(nmt_core::Error::Config(msg.into()))
}
