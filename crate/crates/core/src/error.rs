use thiserror::Error;

use crate::lattice::Edge;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied parameter violates an operation precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("edge {0:?} lies outside the configuration window and no oracle backs it")]
    Unresolved(Edge),

    /// Rejection sampling or radius growth ran out of budget.
    #[error("budget exhausted in {what}: {detail}")]
    BudgetExhausted { what: &'static str, detail: String },

    /// A truncated computation did not certify its value within tolerance.
    #[error("truncation bracket [{lower:.6e}, {upper:.6e}] wider than tolerance {tol:.1e}; grow the box")]
    BracketTooWide { lower: f64, upper: f64, tol: f64 },

    #[error("linear solver did not converge: {0}")]
    NonConvergence(String),

    /// An exact identity failed to hold within its tolerance.
    #[error("identity `{name}` violated: residual {residual:.3e} > tolerance {tol:.1e}")]
    IdentityViolation { name: String, residual: f64, tol: f64 },

    #[error("estimate is statistically indistinguishable from zero: {0}")]
    DegenerateEstimate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
