//! Error type for the command-line front end and its exit codes.

use std::path::PathBuf;

use scboot::ErrorClass;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("cannot open {path}: {source}")]
    Open {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0} contains no data rows")]
    EmptyFile(PathBuf),
    #[error("column '{0}' not found in header")]
    MissingColumn(String),
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("row {row}, column '{column}': '{value}' is not a number")]
    NonNumeric { row: usize, column: String, value: String },
    #[error(transparent)]
    Library(#[from] scboot::Error),
}

impl CliError {
    /// Process exit code: 2 configuration, 3 data, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Open { .. } | CliError::Write { .. } | CliError::MissingColumn(_) => 2,
            CliError::EmptyFile(_) | CliError::Parse { .. } | CliError::NonNumeric { .. } => 3,
            CliError::Library(e) => match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Data => 3,
                ErrorClass::Numerical => 4,
            },
        }
    }

    /// Machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Open { .. } => "open_failed",
            CliError::Write { .. } => "write_failed",
            CliError::EmptyFile(_) => "empty_file",
            CliError::MissingColumn(_) => "missing_column",
            CliError::Parse { .. } => "parse_error",
            CliError::NonNumeric { .. } => "non_numeric",
            CliError::Library(e) => e.code(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
