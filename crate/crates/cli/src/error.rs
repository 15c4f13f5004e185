use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot write {}: {source}", path.display())]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid config {}: {message}", path.display())]
    Config { path: PathBuf, message: String },

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] exsplinet::Error),
}

impl CliError {
    /// 1 for numerical or training failures, 2 for usage, config and input
    /// errors.
    pub fn exit_code(&self) -> u8 {
        use exsplinet::Error as E;
        match self {
            CliError::Core(
                E::NonFinite(_) | E::RejectionStall { .. } | E::DegenerateWeights { .. } | E::Sampler(_),
            ) => 1,
            _ => 2,
        }
    }
}

pub fn write_file(path: PathBuf, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(&path, contents).map_err(|source| CliError::Write { path, source })
}
