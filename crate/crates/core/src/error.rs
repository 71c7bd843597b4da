use thiserror::Error;

/// Crate-wide error type.
///
/// `CutLocus` is deliberately its own variant: callers such as the chain
/// simulator treat it as recoverable and decide policy themselves, while
/// everything else aborts the enclosing run.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("operands live on different manifolds")]
    ManifoldMismatch,

    #[error("point is within {gap:.3e} of the cut locus")]
    CutLocus { gap: f64 },

    #[error("invalid point: {0}")]
    InvalidPoint(String),

    #[error("invalid tangent vector: {0}")]
    InvalidTangent(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("E[H] is numerically singular (smallest eigenvalue {0:.3e}); the mean-operator invertibility assumption fails")]
    SingularMeanOperator(f64),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("Frechet solver did not converge after {iterations} iterations (gradient norm {gradient_norm:.3e})")]
    SolverDiverged {
        iterations: usize,
        gradient_norm: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
