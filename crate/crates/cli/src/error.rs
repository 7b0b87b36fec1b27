use std::fmt;

use mvdist_core::{Error, ErrorKind};

/// A core failure tagged with the pipeline stage that raised it.
#[derive(Debug)]
pub struct StageError {
    pub stage: String,
    pub source: Error,
}

impl StageError {
    pub fn new(stage: impl Into<String>, source: Error) -> Self {
        Self {
            stage: stage.into(),
            source,
        }
    }

    pub fn config(stage: impl Into<String>, msg: impl Into<String>) -> Self {
        Self::new(stage, Error::Config(msg.into()))
    }

    pub fn exit_code(&self) -> i32 {
        match self.source.kind() {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numerical => 4,
        }
    }
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.stage, self.source)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

pub type CliResult<T> = std::result::Result<T, StageError>;

/// Attaches a stage name to core results.
pub trait Stage<T> {
    fn stage(self, name: &str) -> CliResult<T>;
}

impl<T, E: Into<Error>> Stage<T> for std::result::Result<T, E> {
    fn stage(self, name: &str) -> CliResult<T> {
        self.map_err(|e| StageError::new(name, e.into()))
    }
}
