//! CLI error wrapper mapping failures to distinct exit statuses:
//! 2 validation, 3 I/O, 4 training divergence, 5 gradient-check failure.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Core(#[from] saenad::Error),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("gradient check failed for {variant}: max relative error {max_rel_error:e} (threshold {threshold:e})")]
    GradCheckFailed {
        variant: String,
        max_rel_error: f64,
        threshold: f64,
    },

    #[error("cache directory is locked by another writer ({0})")]
    Locked(PathBuf),
}

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;
pub const EXIT_GRADCHECK: i32 = 5;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(saenad::Error::Io(_)) => EXIT_IO,
            CliError::Core(saenad::Error::Diverged { .. }) => EXIT_DIVERGED,
            CliError::Core(_) | CliError::Config(_) => EXIT_VALIDATION,
            CliError::Io { .. } | CliError::Locked(_) => EXIT_IO,
            CliError::GradCheckFailed { .. } => EXIT_GRADCHECK,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub(crate) fn read_file(path: &std::path::Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_file(path: &std::path::Path, bytes: &[u8]) -> CliResult<()> {
    // temp-then-rename so interrupted runs never leave partial artifacts
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|source| CliError::Io {
        path: tmp.clone(),
        source,
    })?;
    std::fs::rename(&tmp, path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}
