use std::path::{Path, PathBuf};

use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    /// Runtime failure inside a pipeline stage.
    pub const FAILURE: i32 = 1;
    /// Unknown flag or malformed command line.
    pub const USAGE: i32 = 2;
    /// A referenced input file does not exist.
    pub const MISSING_FILE: i32 = 3;
    /// Configuration or input validation failed (including shape mismatches).
    pub const INVALID: i32 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Core(dynaguide_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::MissingFile(_) => exit::MISSING_FILE,
            CliError::Invalid(_) => exit::INVALID,
            CliError::Core(_) => exit::FAILURE,
        }
    }

    pub fn from_io(path: &Path, e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::MissingFile(path.to_path_buf())
        } else {
            CliError::Core(e.into())
        }
    }
}

impl From<dynaguide_core::Error> for CliError {
    fn from(e: dynaguide_core::Error) -> Self {
        use dynaguide_core::Error as E;
        match e {
            E::ShapeMismatch { .. } | E::Config(_) | E::DatasetTooShort { .. } => CliError::Invalid(e.to_string()),
            e => CliError::Core(e),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}
