//! Failures tagged with the pipeline stage and an exit code.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad flags, settings or referenced files: exit 2.
    Config,
    /// Anything that goes wrong while running: exit 1.
    Runtime,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub kind: ErrorKind,
    pub stage: String,
    pub message: String,
}

impl CliError {
    pub fn config(stage: &str, message: impl fmt::Display) -> Self {
        CliError {
            kind: ErrorKind::Config,
            stage: stage.to_string(),
            message: message.to_string(),
        }
    }

    pub fn runtime(stage: &str, message: impl fmt::Display) -> Self {
        CliError {
            kind: ErrorKind::Runtime,
            stage: stage.to_string(),
            message: message.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Config => 2,
            ErrorKind::Runtime => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage \"{}\": {}", self.stage, self.message)
    }
}

impl std::error::Error for CliError {}

/// Tags any displayable error with a stage.
pub trait StageExt<T> {
    fn runtime(self, stage: &str) -> Result<T, CliError>;
    fn config(self, stage: &str) -> Result<T, CliError>;
}

impl<T, E: fmt::Display> StageExt<T> for Result<T, E> {
    fn runtime(self, stage: &str) -> Result<T, CliError> {
        self.map_err(|e| CliError::runtime(stage, e))
    }

    fn config(self, stage: &str) -> Result<T, CliError> {
        self.map_err(|e| CliError::config(stage, e))
    }
}
