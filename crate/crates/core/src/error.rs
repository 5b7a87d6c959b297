use thiserror::Error;

/// Errors raised by evaluators and solvers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("singular point: {0}")]
    Singularity(String),
    #[error("non-finite value at node {node}")]
    NonFinite { node: String },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("quadrature failure: {0}")]
    Quadrature(String),
    #[error("iteration diverged: contraction factors {factors:?}")]
    Divergence { factors: Vec<f64> },
    #[error("no convergence after {iterations} iterations (last distance {last_distance:e})")]
    NonConvergence { iterations: usize, last_distance: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
