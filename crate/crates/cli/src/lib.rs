//! Batch driver for the `fmm` command-line tool.

use std::path::{Path, PathBuf};

pub mod config;
pub mod manifest;
pub mod pipeline;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] fmm_core::FmmError),
    #[error("{0} of {1} model fits failed; see fit_errors.txt")]
    FitFailures(usize, usize),
}

impl CliError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit code: 2 for usage and configuration errors, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(fmm_core::FmmError::InvalidArgument(_)) => 2,
            _ => 1,
        }
    }
}
