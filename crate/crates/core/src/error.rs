use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain where the quantity is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// The inner maximisation of a conjugate ran into the domain edge
    /// without bracketing the slope condition.
    #[error("no convergence: {0}")]
    NonConvergence(String),

    /// No finite scale satisfies the MGF domination on the trusted grid.
    #[error("unbounded norm: {0}")]
    Unbounded(String),

    #[error("triangle inequality violated beyond repair tolerance: {0}")]
    TriangleViolation(String),

    #[error("exact covering limited to {limit} points, got {size}")]
    SizeLimit { size: usize, limit: usize },

    #[error("no validity onset u0 on the grid (grid ceiling {ceiling}): {reason}")]
    NoOnset { ceiling: f64, reason: String },

    #[error("matrix is not positive semidefinite (min eigenvalue {0:e})")]
    NotSpd(f64),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}
