use thiserror::Error;

/// Errors raised by the SPD toolbox, the Riccati maps and the estimators built on them.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not symmetric (asymmetry {asymmetry:.3e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is not positive definite (smallest eigenvalue {min_eigenvalue:.3e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("matrix is ill-conditioned (condition number {condition:.3e})")]
    IllConditioned { condition: f64 },

    #[error("transform is singular")]
    SingularTransform,

    #[error("degenerate covariance: {0}")]
    DegenerateCovariance(&'static str),

    #[error("dynamics matrix A is singular")]
    SingularDynamics,

    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("structural condition violated: {0}")]
    Structural(String),

    #[error("information matrix is singular after {horizon} steps; system not observable at that horizon")]
    NotObservableAtHorizon { horizon: usize },

    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("empty input")]
    EmptyInput,

    #[error("|a| = {0} <= 1: no critical arrival probability")]
    NoCriticalValue(f64),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("covariance overflow at step {step}")]
    Overflow { step: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
