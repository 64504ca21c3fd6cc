use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Failure of a container read or write.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: not a {expected} file (bad magic)")]
    BadMagic { path: PathBuf, expected: &'static str },
    #[error("{path}: unsupported format version {version}")]
    UnsupportedVersion { path: PathBuf, version: u16 },
    #[error("{path}: truncated, expected {expected} bytes but found {actual}")]
    Truncated { path: PathBuf, expected: u64, actual: u64 },
    #[error("{path}: checksum mismatch (stored {stored:016x}, computed {computed:016x})")]
    ChecksumMismatch { path: PathBuf, stored: u64, computed: u64 },
    #[error("{path}: malformed header: {reason}")]
    Header { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl FormatError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        FormatError::Io { path: path.to_path_buf(), source }
    }

    pub fn header(path: &Path, reason: impl Into<String>) -> Self {
        FormatError::Header { path: path.to_path_buf(), reason: reason.into() }
    }
}

/// Any failure of a pipeline stage, mapped onto the process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Format(#[from] FormatError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("numerical error: {0}")]
    Numerical(cpi_core::Error),
}

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Format(_) | CliError::Io { .. } => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<cpi_core::Error> for CliError {
    fn from(e: cpi_core::Error) -> Self {
        use cpi_core::Error as E;
        match e {
            E::InvalidConfig(_) | E::NoRealConjugate { .. } | E::ObjectBehindSource { .. } | E::SourceConjugateToBoth => CliError::Config(e.to_string()),
            other => CliError::Numerical(other),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
