//! Orchestration for the `branchpde` command line.

pub mod config;
pub mod manifest;
pub mod problem;
pub mod stages;

use branchpde_core::Error;

/// Process exit status for a failed command.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitKind {
    Validation = 1,
    Numerical = 2,
    Threshold = 3,
}

#[derive(Debug)]
pub struct Failure {
    pub kind: ExitKind,
    pub stage: String,
    pub message: String,
}

impl Failure {
    pub fn new(kind: ExitKind, stage: &str, message: impl Into<String>) -> Self {
        Failure {
            kind,
            stage: stage.to_string(),
            message: message.into(),
        }
    }

    pub fn from_error(stage: &str, e: Error) -> Self {
        let kind = match e {
            Error::InvalidConfig(_)
            | Error::InvalidModel(_)
            | Error::MalformedCode(_)
            | Error::LengthMismatch(..)
            | Error::IndexNotDominated(..)
            | Error::DimensionMismatch { .. }
            | Error::BadCheckpoint(_)
            | Error::Parse(_)
            | Error::Io(_) => ExitKind::Validation,
            Error::Overflow
            | Error::ZeroOrderExpansion
            | Error::DerivativeUnavailable(_)
            | Error::AllSamplesAborted(_)
            | Error::ExcessiveAborts { .. }
            | Error::NonFiniteLoss { .. }
            | Error::EmptyGrid => ExitKind::Numerical,
        };
        Failure::new(kind, stage, e.to_string())
    }

    pub fn code(&self) -> i32 {
        self.kind as i32
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.stage, self.message)
    }
}

pub type CliResult<T> = std::result::Result<T, Failure>;

/// Attaches a stage name to core errors.
pub trait Stage<T> {
    fn stage(self, name: &str) -> CliResult<T>;
}

impl<T> Stage<T> for branchpde_core::Result<T> {
    fn stage(self, name: &str) -> CliResult<T> {
        self.map_err(|e| Failure::from_error(name, e))
    }
}

impl<T> Stage<T> for std::io::Result<T> {
    fn stage(self, name: &str) -> CliResult<T> {
        self.map_err(|e| Failure::from_error(name, Error::Io(e)))
    }
}
