//! Crate-wide error type.

/// Errors produced by the solvers and experiment drivers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("bad parameter: {0}")]
    BadParameter(String),

    /// Right-hand side of a pure-Neumann Poisson solve fails the
    /// compatibility condition (its integral must vanish).
    #[error("incompatible rhs: |integral| = {integral:e} exceeds {tol:e}")]
    IncompatibleRhs { integral: f64, tol: f64 },

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    #[error("Newton diverged after {iters} iterations, last residual {residual:e}")]
    NewtonDiverged { iters: usize, residual: f64 },

    /// A density solve returned a non-positive value; with the upwind
    /// assembly this signals a discretization failure.
    #[error("density not positive: min value {min:e}")]
    NonPositive { min: f64 },

    #[error("negative density: {0:e}")]
    NegativeDensity(f64),

    #[error("line search stalled at step {step:e}")]
    LineSearchStalled { step: f64 },

    /// The scalar barrier equation has no two positive roots (delta too large).
    #[error("no barrier: delta = {delta} is above the fold")]
    NoBarrier { delta: f64 },

    #[error("continuation diverged: sup m grew from {first:e} to {last:e}")]
    ContinuationDiverged { first: f64, last: f64 },

    #[error("duality residual {residual:e} exceeds tolerance {tol:e}")]
    DualityFailed { residual: f64, tol: f64 },

    #[error("no convergence: {0}")]
    NonConvergence(String),

    #[error("infeasible epsilon {eps}: {reason}")]
    InfeasibleEps { eps: f64, reason: String },

    #[error("bump support escapes the domain at scale {scale}")]
    BumpEscapesDomain { scale: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
