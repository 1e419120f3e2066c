use std::path::PathBuf;
use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] vaps_core::Error),

    #[error("input file not found: {0}")]
    MissingInput(PathBuf),

    #[error("invalid argument `{flag}`: {message}")]
    Argument { flag: &'static str, message: String },

    #[error("cannot create output directory {path}: {source}")]
    OutputDir {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 2 for bad input, 3 for failures while running.
    pub fn exit_code(&self) -> ExitCode {
        let validation = match self {
            CliError::Core(e) => e.is_validation(),
            CliError::MissingInput(_) | CliError::Argument { .. } => true,
            CliError::OutputDir { .. } => false,
        };
        ExitCode::from(if validation { 2 } else { 3 })
    }
}

pub type CliResult<T> = Result<T, CliError>;
