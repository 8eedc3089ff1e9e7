//! Symmetric positive-semidefinite linear solves with spectral
//! regularization.
//!
//! Covariance matrices in this crate are Gram matrices of a genuine inner
//! product, so they are symmetric PSD by construction but can be nearly
//! singular when constraints become redundant (e.g. multipliers driven deep
//! into a saturated regime). Solving through the eigendecomposition lets us
//! measure the conditioning and add the smallest ridge that restores it.

use ndarray::prelude::*;
use ndarray_linalg::{Eigh, UPLO};

use crate::error::{Error, Result};
use crate::tolerances as tol;

/// Outcome of an SPD solve.
#[derive(Debug, Clone)]
pub struct SpdSolution {
    pub x: Array1<f64>,
    /// True when a ridge was added to make the system solvable.
    pub regularized: bool,
    /// Condition number of the (unregularized) matrix, `inf` if singular.
    pub condition: f64,
}

/// Solves `m x = rhs` for symmetric positive-semidefinite `m`.
///
/// When the condition number exceeds `condition_cap`, a ridge
/// `ridge * max_eigenvalue` is added to every eigenvalue and the solution is
/// flagged as regularized. Fails only if the matrix has no positive spectrum
/// at all.
pub fn solve_spd(
    m: &Array2<f64>,
    rhs: &Array1<f64>,
    ridge: f64,
    condition_cap: f64,
) -> Result<SpdSolution> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::NotSquare {
            rows: n,
            cols: m.ncols(),
        });
    }
    if rhs.len() != n {
        return Err(Error::DimensionMismatch {
            left: rhs.len(),
            right: n,
            context: "solve_spd rhs".into(),
        });
    }
    let asym = m
        .iter()
        .zip(m.t().iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    let scale = m.iter().map(|v| v.abs()).fold(0.0f64, f64::max).max(1.0);
    if asym > 1e-10 * scale {
        return Err(Error::SingularCovariance(format!(
            "matrix is not symmetric (asymmetry {asym:.3e})"
        )));
    }

    let (vals, vecs) = m.eigh(UPLO::Lower)?;
    let max = vals[vals.len() - 1];
    let min = vals[0];
    if !(max > 0.0) {
        return Err(Error::SingularCovariance(format!(
            "no positive spectrum (max eigenvalue {max:.3e})"
        )));
    }
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    let needs_ridge = condition > condition_cap;
    if needs_ridge {
        log::warn!(
            "covariance condition {condition:.3e} exceeds cap {condition_cap:.3e}; adding ridge {:.3e}",
            ridge * max
        );
    }
    let shift = if needs_ridge { ridge * max } else { 0.0 };

    // x = V diag(1/(lambda + shift)) V^T rhs
    let proj = vecs.t().dot(rhs);
    let scaled = Array1::from_iter(
        proj.iter()
            .zip(vals.iter())
            .map(|(&p, &v)| p / (v + shift)),
    );
    let x = vecs.dot(&scaled);
    Ok(SpdSolution {
        x,
        regularized: needs_ridge,
        condition,
    })
}

/// Solves with the crate-default conditioning policy.
pub fn solve_covariance(m: &Array2<f64>, rhs: &Array1<f64>, ridge: f64) -> Result<SpdSolution> {
    solve_spd(m, rhs, ridge, tol::COVARIANCE_CONDITION_CAP)
}
