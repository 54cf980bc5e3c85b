use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the reward-learning pipeline.
#[derive(Debug, Error)]
pub enum SpwError {
    #[error("{path}:{line}: parse error: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("dimension mismatch{}: expected {expected}, got {actual}", at_line(*.line))]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        line: Option<usize>,
    },
    #[error("expert transition set is empty")]
    EmptyExpertSet,
    #[error("no trajectory is long enough for a window of length {horizon}")]
    NoValidWindow { horizon: usize },
    #[error("segment has no ground-truth rewards")]
    UnlabeledSegment,
    #[error("invalid temperature {0}; must be > 0 or infinite")]
    InvalidTemperature(f64),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("invalid label {0}; must be 0, 0.5 or 1")]
    InvalidLabel(f64),
    #[error("length mismatch: {what} has {actual}, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {loss}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },
    #[error("histogram bin edges differ")]
    MismatchedBins,
    #[error("correlation undefined for constant input")]
    UndefinedCorrelation,
    #[error("value iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

fn at_line(line: Option<usize>) -> String {
    match line {
        Some(l) => format!(" at line {l}"),
        None => String::new(),
    }
}

pub type Result<T, E = SpwError> = std::result::Result<T, E>;

impl SpwError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SpwError::Io {
            path: path.into(),
            source,
        }
    }
}
