//! Error type shared by every module.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HacError {
    #[error("{family} parameter {theta} is outside its domain")]
    Domain { family: String, theta: f64 },
    #[error("parameter vector is outside the cone parameter space: {0}")]
    OutsideCone(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("no start converged: {0}")]
    NonConvergence(String),
    #[error("finite-difference scheme infeasible at node {node}: {reason}")]
    Scheme { node: String, reason: String },
    #[error("fits are not comparable: {0}")]
    Provenance(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl HacError {
    /// Coarse error class used for process exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            HacError::Numeric(_)
            | HacError::NotPositiveDefinite(_)
            | HacError::NonConvergence(_) => ErrorKind::Numerical,
            HacError::Io(_) => ErrorKind::Io,
            _ => ErrorKind::Domain,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            HacError::Domain { .. } => "domain",
            HacError::OutsideCone(_) => "outside_cone",
            HacError::Argument(_) => "argument",
            HacError::Unsupported(_) => "unsupported",
            HacError::Parse(_) => "parse",
            HacError::Numeric(_) => "numeric",
            HacError::NotPositiveDefinite(_) => "not_positive_definite",
            HacError::NonConvergence(_) => "non_convergence",
            HacError::Scheme { .. } => "scheme",
            HacError::Provenance(_) => "provenance",
            HacError::Io(_) => "io",
            HacError::Json(_) => "json",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Domain,
    Numerical,
    Io,
}

pub type Result<T> = std::result::Result<T, HacError>;

pub(crate) fn arg<T>(msg: impl Into<String>) -> Result<T> {
    Err(HacError::Argument(msg.into()))
}
