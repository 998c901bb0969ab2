use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("obstacle is +inf or NaN at node {node}")]
    Infeasible { node: usize },
    #[error("{what} did not converge after {iterations} iterations")]
    NonConvergence { what: &'static str, iterations: usize },
    #[error("singular linear system (zero pivot at row {pivot})")]
    Singular { pivot: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("control violates its bounds at node {node}")]
    NotAdmissible { node: usize },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("direction leaves the tangent cone of the control bounds at node {node}")]
    DirectionOutsideCone { node: usize },
    #[error("bound multiplier has the wrong sign at node {node} (violation {violation:e})")]
    NotStronglyStationary { node: usize, violation: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
