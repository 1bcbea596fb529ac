use std::io;

use thiserror::Error;

use crate::multiindex::MultiIndex;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("multi-index length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("multi-index {0} is not dominated by {1}")]
    IndexNotDominated(MultiIndex, MultiIndex),
    #[error("integer overflow in factorial or binomial")]
    Overflow,
    #[error("Faà di Bruno expansion requires |mu| >= 1")]
    ZeroOrderExpansion,
    #[error("malformed code: {0}")]
    MalformedCode(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("derivative unavailable: {0}")]
    DerivativeUnavailable(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("all {0} samples aborted")]
    AllSamplesAborted(usize),
    #[error("too many aborted samples at point {point}: {aborted} of {total}")]
    ExcessiveAborts { point: usize, aborted: usize, total: usize },
    #[error("non-finite loss at epoch {epoch}: {loss}")]
    NonFiniteLoss { epoch: usize, loss: f64 },
    #[error("empty evaluation grid")]
    EmptyGrid,
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}
