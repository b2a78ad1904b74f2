use thiserror::Error;

use crate::train::TrainTrace;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input: non-finite entries, bad arguments, out-of-range parameters.
    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch in {op}: expected {expected}, got {got}")]
    Dimension {
        op: &'static str,
        expected: String,
        got: String,
    },

    /// A requested computation exceeds a declared size guard.
    #[error("resource limit exceeded: {0}")]
    Resource(String),

    /// A theorem or construction precondition does not hold on the given input.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The operation is not defined for this network family.
    #[error("out of scope: {0}")]
    Scope(String),

    #[error("construction failed: {0}")]
    Construction(String),

    #[error("did not converge: {0}")]
    NonConvergence(String),

    /// Training produced a non-finite cost. The trace holds every finite record logged before.
    #[error("training diverged at step {step}")]
    Diverged { step: usize, trace: TrainTrace },

    #[error("malformed {what}: {msg}")]
    Format { what: &'static str, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}

pub(crate) fn dim_err<T>(op: &'static str, expected: impl ToString, got: impl ToString) -> Result<T> {
    Err(Error::Dimension {
        op,
        expected: expected.to_string(),
        got: got.to_string(),
    })
}
