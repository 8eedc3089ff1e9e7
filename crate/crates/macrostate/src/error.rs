//! Crate-wide error type.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by operator construction, state inversion, and integration.
#[derive(Debug, Error)]
pub enum Error {
    /// A matrix that must be square is not.
    #[error("matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },

    /// Two objects that must share a dimension or length do not.
    #[error("dimension mismatch: {left} vs {right} ({context})")]
    DimensionMismatch {
        left: usize,
        right: usize,
        context: String,
    },

    /// A matrix fails the Hermiticity check. Inputs are never symmetrized
    /// silently; callers must supply Hermitian data.
    #[error("matrix is not Hermitian: |M - M^H|_F = {deviation:.3e} exceeds {limit:.3e}")]
    NotHermitian { deviation: f64, limit: f64 },

    /// A matrix fails the density-operator checks (unit trace, positivity).
    #[error("not a density operator: {0}")]
    NotDensity(String),

    /// LAPACK-backed eigendecomposition failure.
    #[error("linear algebra backend failed: {0}")]
    Linalg(#[from] ndarray_linalg::error::LinalgError),

    /// A lattice model description is internally inconsistent.
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// The requested Hilbert-space dimension exceeds the configured cap.
    #[error("Hilbert-space dimension {dim} exceeds cap {cap}")]
    DimensionCap { dim: usize, cap: usize },

    /// Expectation targets cannot be matched by any Gibbs state over the
    /// given constraint operators (out of range, or the solver diverged).
    #[error("targets are not realizable: {0}")]
    NonRealizableTargets(String),

    /// The iterative solver exhausted its iteration budget.
    #[error("iteration limit {iters} reached; worst residual {residual:.3e}")]
    IterationLimit { iters: usize, residual: f64 },

    /// A covariance/Gram matrix is singular even after regularization.
    #[error("singular covariance: {0}")]
    SingularCovariance(String),

    /// A self-consistency check failed at runtime; results are unreliable.
    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),

    /// The integrator refused a step whose multiplier motion is too large.
    #[error("time step rejected at t = {t}: |zeta_dot|*dt = {size:.3e} exceeds 1; reduce dt")]
    StepRejected { t: f64, size: f64 },

    /// Solver or integrator settings are out of range.
    #[error("invalid settings: {0}")]
    InvalidSettings(String),

    /// A preparation schedule is internally inconsistent.
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    /// A trajectory time grid does not support the requested operation.
    #[error("time grid error: {0}")]
    Grid(String),
}
