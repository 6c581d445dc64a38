use thiserror::Error;

/// Errors raised by the numerical pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} = {requested} exceeds the resource guard {max}")]
    ResourceGuard {
        what: &'static str,
        requested: usize,
        max: usize,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("field closure returned a zero vector at node {node} ({x}, {y})")]
    Sampling { node: usize, x: f64, y: f64 },

    #[error("linear solver failed: {0}")]
    Solver(String),

    #[error("rotation undefined at the pole: 1 - n3^2 = {lambda:e}")]
    PoleDegeneracy { lambda: f64 },

    #[error("point outside the admissible domain: {0}")]
    Domain(String),

    #[error("singular element {element}: centroid value coincides with the target direction")]
    Singularity { element: usize },

    #[error("hypothesis violated: {0}")]
    HypothesisViolation(String),

    #[error("continuation step too large: tangent projection at node {node} has norm {norm:.3e}")]
    StepTooLarge { node: usize, norm: f64 },

    #[error("continuation failed at lambda = {lambda}: step {step:e} below the minimum")]
    ContinuationFailure { lambda: f64, step: f64 },

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
