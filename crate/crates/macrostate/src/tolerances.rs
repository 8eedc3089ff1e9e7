//! Numerical tolerances shared across the crate.
//!
//! Every cross-module threshold lives here so that validation behaviour is
//! pinned in one place. Values fall into three bands: machine-precision
//! checks on exact algebraic identities (1e-12), accumulated-roundoff checks
//! on composed operations (1e-10), and physics-level consistency checks that
//! tolerate solver truncation error (1e-8).

/// Relative Frobenius deviation allowed between a matrix and its conjugate
/// transpose. Exact Hermitian assembly only leaves a few ulps of noise, so
/// anything above this indicates genuinely non-Hermitian input.
pub const HERMITICITY_REL: f64 = 1e-12;

/// Absolute deviation of a density operator's trace from one.
pub const DENSITY_TRACE_ABS: f64 = 1e-10;

/// Most negative eigenvalue a density operator may carry; small negative
/// values arise from roundoff in otherwise positive matrices.
pub const DENSITY_EIGENVALUE_FLOOR: f64 = -1e-10;

/// Per-site continuity defect |i[H, A_i] + div J_i|_F allowed, relative to
/// |H|_F. The partial-sum current construction satisfies this identically up
/// to roundoff.
pub const CONTINUITY_REL: f64 = 1e-10;

/// Condition-number cap on the Frobenius Gram matrix of the site densities;
/// beyond this the observables are treated as linearly dependent.
pub const GRAM_CONDITION_CAP: f64 = 1e12;

/// Relative commutator norm below which an operator counts as conserved,
/// |[H, C]|_F <= COMMUTATION_REL * (1 + |H|_F) * (1 + |C|_F).
pub const COMMUTATION_REL: f64 = 1e-12;

/// Frobenius distance allowed between a Gibbs state and its reconstruction
/// from the stored multipliers.
pub const STATE_RECONSTRUCTION_ABS: f64 = 1e-10;

/// Agreement required between the multiplier form of the entropy
/// (zeta0 + sum_j zeta_j <A_j>) and the spectral form (-Tr w log w).
pub const ENTROPY_AGREEMENT_ABS: f64 = 1e-8;

/// Exponent-eigenvalue gap below which the divided-difference kernel
/// (e^x - e^y)/(x - y) switches to its series expansion.
pub const KUBO_DEGENERATE_GAP: f64 = 1e-8;

/// Condition-number threshold on the correlation (covariance) matrix above
/// which ridge regularization is applied before solving.
pub const COVARIANCE_CONDITION_CAP: f64 = 1e12;

/// Predicted dual decreases below this fraction of the dual's magnitude
/// drown in double-precision roundoff, so the inversion's line search stops
/// testing for them and takes the bare Newton step, which is locally
/// convergent. Without this the terminal iterations accept or reject on
/// noise and the residual stalls around 1e-9.
pub const DUAL_DECREASE_FLOOR: f64 = 1e-14;

/// Agreement required between the two evaluation routes for an evolved
/// prepared state (evolve-then-normalize vs assemble-at-t).
pub const DUAL_ROUTE_ABS: f64 = 1e-10;

/// Correlation-norm threshold below which a vector is dropped during
/// Gram-Schmidt orthogonalization against the constants of motion.
pub const ORTHOGONALITY_DROP: f64 = 1e-10;

/// Orthonormality defect allowed in a spatial mode basis.
pub const MODE_ORTHONORMALITY_ABS: f64 = 1e-12;

/// Allowed drift of conserved-quantity expectations along any trajectory.
pub const CONSERVED_DRIFT_ABS: f64 = 1e-8;

/// Slack granted to entropy inequalities (maximum-entropy dominance and
/// single-step growth); covers inversion-tolerance leakage into S.
pub const ENTROPY_SLACK: f64 = 1e-8;

/// A step is rejected when |zeta_dot| * dt exceeds this bound.
pub const STEP_NORM_CAP: f64 = 1.0;

/// Allowed defect in zeta0 = log Z for states produced by the Gibbs builder.
pub const LOG_PARTITION_ABS: f64 = 1e-10;

/// Matching tolerance when locating a requested time on a stored grid,
/// relative to the grid step.
pub const GRID_SNAP_REL: f64 = 1e-6;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bands_are_ordered() {
        // Machine-precision checks must be stricter than roundoff checks,
        // which must be stricter than physics-level checks.
        assert!(HERMITICITY_REL < CONTINUITY_REL);
        assert!(COMMUTATION_REL < CONTINUITY_REL);
        assert!(CONTINUITY_REL < ENTROPY_AGREEMENT_ABS);
        assert!(STATE_RECONSTRUCTION_ABS < ENTROPY_AGREEMENT_ABS);
        assert!(DUAL_ROUTE_ABS < CONSERVED_DRIFT_ABS);
    }

    #[test]
    fn all_positive() {
        for v in [
            HERMITICITY_REL,
            DENSITY_TRACE_ABS,
            CONTINUITY_REL,
            GRAM_CONDITION_CAP,
            COMMUTATION_REL,
            STATE_RECONSTRUCTION_ABS,
            ENTROPY_AGREEMENT_ABS,
            KUBO_DEGENERATE_GAP,
            COVARIANCE_CONDITION_CAP,
            DUAL_ROUTE_ABS,
            ORTHOGONALITY_DROP,
            MODE_ORTHONORMALITY_ABS,
            CONSERVED_DRIFT_ABS,
            ENTROPY_SLACK,
            STEP_NORM_CAP,
            LOG_PARTITION_ABS,
            GRID_SNAP_REL,
        ] {
            assert!(v > 0.0);
        }
        assert!(DENSITY_EIGENVALUE_FLOOR < 0.0);
    }
}
