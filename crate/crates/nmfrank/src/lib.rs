//! File formats, parallel execution and the `nmfrank` command line on top of
//! [`nmfrank_core`].

pub mod cli;
pub mod exec;
pub mod export;
pub mod io;
pub mod report;
pub mod scenario;

use std::path::{Path, PathBuf};

pub use exec::Pool;

/// Command failures, each mapped to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] nmfrank_core::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 2 usage, 3 data, 4 numerical failure.
    pub fn exit_code(&self) -> u8 {
        use nmfrank_core::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Io { .. } | CliError::Data(_) => 3,
            CliError::Core(e) if e.is_numerical() => 4,
            CliError::Core(e) => match e.root() {
                E::InvalidConfig(_) | E::RankOutOfRange { .. } => 2,
                _ => 3,
            },
        }
    }
}
