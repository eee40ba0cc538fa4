use thiserror::Error;

/// Errors produced by the solvers, integrators, and file I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("matrix is not symmetric: max |Q - Q^T| = {asymmetry:e}")]
    NotSymmetric { asymmetry: f64 },

    #[error("invalid constraint set: {0}")]
    InvalidSet(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("integration produced a non-finite state at t = {}", .0.times.last().copied().unwrap_or(0.0))]
    NonFiniteState(Box<crate::dynamics::Trajectory>),

    #[error("active-set cycle guard exceeded after {iterations} iterations")]
    CycleGuard { iterations: usize },

    #[error("rho = {rho} is not certified for scheme {scheme} (needs rho > {bound})")]
    RhoNotCertified { rho: f64, scheme: char, bound: f64 },

    #[error("{what} did not converge within {max_iter} iterations")]
    MaxIter { what: &'static str, max_iter: usize },

    #[error("subproblem certificate failed: variational gap {gap:e}")]
    Certificate { gap: f64 },

    #[error("starting point is not in the constraint set (distance {distance:e})")]
    StartOutside { distance: f64 },

    #[error("exact trajectory exceeded {0} region switches")]
    SwitchGuard(usize),

    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
