use std::path::PathBuf;

use fractoseg_seg::SegError;

/// Errors surfaced by the command-line front end.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("path not found: {}", .0.display())]
    PathMissing(PathBuf),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    /// 0 success, 1 runtime failure, 2 invalid configuration, 3 missing input path.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Failed(_) => 1,
            CliError::ConfigInvalid(_) => 2,
            CliError::PathMissing(_) => 3,
        }
    }

    pub fn failed(e: impl std::fmt::Display) -> Self {
        CliError::Failed(e.to_string())
    }
}

impl From<SegError> for CliError {
    fn from(e: SegError) -> Self {
        match e {
            SegError::Config(_) | SegError::InvalidThreshold(_) | SegError::Augment(_) => CliError::ConfigInvalid(e.to_string()),
            SegError::PretrainedUnavailable(p) => CliError::PathMissing(p),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failed(e.to_string())
    }
}

impl From<fractoseg_core::DataError> for CliError {
    fn from(e: fractoseg_core::DataError) -> Self {
        use fractoseg_core::DataError as D;
        match e {
            D::BadFractions(..) | D::UnknownSplitMethod(_) => CliError::ConfigInvalid(e.to_string()),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Failed(e.to_string())
    }
}
