//! Hermitian operators, density operators, and exact unitary evolution on a
//! finite-dimensional Hilbert space.
//!
//! Everything downstream (Gibbs states, correlation inner products, memory
//! kernels) is built on one primitive: the full eigendecomposition of a
//! Hermitian matrix. [`EigenSystem`] caches it and exposes basis changes,
//! spectral functions, and phase evolution so that repeated propagation never
//! re-diagonalizes.

use ndarray::prelude::*;
use ndarray_linalg::{Eigh, UPLO};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::tolerances as tol;

/// Dense complex matrix used for all operator storage.
pub type CMatrix = Array2<C64>;

/// A validated Hermitian operator.
#[derive(Debug, Clone)]
pub struct HermitianOperator {
    matrix: CMatrix,
}

impl HermitianOperator {
    /// Wraps a matrix after checking squareness and Hermiticity.
    ///
    /// The check is relative: `|M - M^H|_F <= HERMITICITY_REL * max(1, |M|_F)`.
    /// Non-Hermitian input is an error, never silently symmetrized.
    pub fn new(matrix: CMatrix) -> Result<Self> {
        let (rows, cols) = matrix.dim();
        if rows != cols {
            return Err(Error::NotSquare { rows, cols });
        }
        if rows == 0 {
            return Err(Error::InvalidModel("empty operator".into()));
        }
        if matrix.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NumericalBreakdown(
                "operator entries are not finite".into(),
            ));
        }
        let mut defect = 0.0f64;
        let mut norm = 0.0f64;
        for i in 0..rows {
            for j in 0..cols {
                let d = matrix[[i, j]] - matrix[[j, i]].conj();
                defect += d.norm_sqr();
                norm += matrix[[i, j]].norm_sqr();
            }
        }
        let defect = defect.sqrt();
        let limit = tol::HERMITICITY_REL * norm.sqrt().max(1.0);
        if defect > limit {
            return Err(Error::NotHermitian {
                deviation: defect,
                limit,
            });
        }
        Ok(Self { matrix })
    }

    /// Takes the Hermitian part `(M + M^H)/2` of a matrix that is Hermitian
    /// in exact arithmetic, stripping accumulated roundoff. Internal
    /// assembly only; user input goes through [`HermitianOperator::new`].
    pub(crate) fn from_hermitian_part(matrix: &CMatrix) -> Self {
        let n = matrix.nrows();
        let mut out = matrix.clone();
        for i in 0..n {
            for j in 0..n {
                out[[i, j]] = (matrix[[i, j]] + matrix[[j, i]].conj()) * 0.5;
            }
        }
        Self { matrix: out }
    }

    /// Identity operator of the given dimension.
    pub fn identity(dim: usize) -> Self {
        Self {
            matrix: CMatrix::eye(dim),
        }
    }

    /// Zero operator of the given dimension.
    pub fn zeros(dim: usize) -> Self {
        Self {
            matrix: CMatrix::zeros((dim, dim)),
        }
    }

    /// Hilbert-space dimension.
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Raw matrix view.
    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    /// Consumes the operator, returning its matrix.
    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    /// Trace; imaginary part vanishes for Hermitian operators.
    pub fn trace(&self) -> f64 {
        self.matrix.diag().iter().map(|z| z.re).sum()
    }

    /// Frobenius norm.
    pub fn frobenius_norm(&self) -> f64 {
        self.matrix
            .iter()
            .map(|z| z.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Returns `self * factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            matrix: self.matrix.mapv(|z| z * factor),
        }
    }

    /// Full eigendecomposition (ascending eigenvalues, orthonormal columns).
    pub fn eigh(&self) -> Result<EigenSystem> {
        let (values, mut vectors) = self.matrix.eigh(UPLO::Lower)?;
        // Depending on how the backend maps row-major buffers onto LAPACK's
        // column-major convention, the returned columns may diagonalize the
        // transpose (= conjugate, for Hermitian input) instead of the matrix
        // itself. Probe once at startup and fix up if needed; real-symmetric
        // matrices are blind to the difference, complex ones are not.
        if eigh_returns_conjugate_vectors() {
            vectors.mapv_inplace(|z| z.conj());
        }
        Ok(EigenSystem { values, vectors })
    }

    /// Least and greatest eigenvalue.
    pub fn eigenvalue_range(&self) -> Result<(f64, f64)> {
        let eig = self.eigh()?;
        let n = eig.values.len();
        Ok((eig.values[0], eig.values[n - 1]))
    }
}

impl std::ops::Add for &HermitianOperator {
    type Output = HermitianOperator;
    fn add(self, rhs: &HermitianOperator) -> HermitianOperator {
        HermitianOperator {
            matrix: &self.matrix + &rhs.matrix,
        }
    }
}

impl std::ops::Sub for &HermitianOperator {
    type Output = HermitianOperator;
    fn sub(self, rhs: &HermitianOperator) -> HermitianOperator {
        HermitianOperator {
            matrix: &self.matrix - &rhs.matrix,
        }
    }
}

/// Cached eigendecomposition of a Hermitian operator.
///
/// `vectors` holds orthonormal eigenvectors as columns, so for a matrix `M`
/// in the computational basis, `to_eigenbasis(M) = V^H M V`.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    /// Eigenvalues in ascending order.
    pub values: Array1<f64>,
    /// Eigenvectors, one per column, matching `values`.
    pub vectors: CMatrix,
}

impl EigenSystem {
    /// Dimension of the underlying space.
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Conjugate of `vectors`, i.e. `V^H`.
    pub fn adjoint(&self) -> CMatrix {
        let mut out = CMatrix::zeros(self.vectors.raw_dim());
        for i in 0..self.vectors.nrows() {
            for j in 0..self.vectors.ncols() {
                out[[j, i]] = self.vectors[[i, j]].conj();
            }
        }
        out
    }

    /// Transforms a matrix into the eigenbasis: `V^H M V`.
    pub fn to_eigenbasis(&self, m: &CMatrix) -> CMatrix {
        self.adjoint().dot(m).dot(&self.vectors)
    }

    /// Transforms a matrix back from the eigenbasis: `V M V^H`.
    pub fn from_eigenbasis(&self, m: &CMatrix) -> CMatrix {
        self.vectors.dot(m).dot(&self.adjoint())
    }

    /// Applies a real spectral function: `V f(Lambda) V^H`.
    pub fn apply(&self, f: impl Fn(f64) -> f64) -> CMatrix {
        let n = self.dim();
        let mut diag = CMatrix::zeros((n, n));
        for (i, &v) in self.values.iter().enumerate() {
            diag[[i, i]] = C64::new(f(v), 0.0);
        }
        self.from_eigenbasis(&diag)
    }

    /// Multiplies entries of an eigenbasis matrix by `exp(i (l_m - l_n) t)`.
    ///
    /// With `t > 0` this is Heisenberg evolution of an observable; with the
    /// sign flipped it propagates a state.
    pub fn phase_evolve_in_basis(&self, m_eig: &CMatrix, t: f64) -> CMatrix {
        let n = self.dim();
        let mut out = m_eig.clone();
        for i in 0..n {
            for j in 0..n {
                let phase = C64::from_polar(1.0, (self.values[i] - self.values[j]) * t);
                out[[i, j]] *= phase;
            }
        }
        out
    }

    /// Heisenberg evolution `A(t) = e^{iHt} A e^{-iHt}` of an observable,
    /// where `self` diagonalizes `H`. Negative `t` gives the retarded lag
    /// `A(-s)` used in memory integrals.
    pub fn heisenberg(&self, a: &HermitianOperator, t: f64) -> HermitianOperator {
        let a_eig = self.to_eigenbasis(a.matrix());
        let evolved = self.phase_evolve_in_basis(&a_eig, t);
        HermitianOperator::from_hermitian_part(&self.from_eigenbasis(&evolved))
    }

    /// Schroedinger evolution `rho(t) = e^{-iHt} rho e^{iHt}` of a state.
    pub fn evolve_state(&self, rho: &DensityOperator, t: f64) -> DensityOperator {
        let r_eig = self.to_eigenbasis(rho.matrix());
        let evolved = self.phase_evolve_in_basis(&r_eig, -t);
        let back = self.from_eigenbasis(&evolved);
        DensityOperator::from_valid(HermitianOperator::from_hermitian_part(&back))
    }
}

/// Detects, once per process, whether the LAPACK binding returns
/// eigenvectors of the conjugated matrix for complex Hermitian row-major
/// input. Decided by reconstructing a fixed 2x2 matrix with an imaginary
/// off-diagonal part.
fn eigh_returns_conjugate_vectors() -> bool {
    use std::sync::OnceLock;
    static NEEDS_CONJUGATE: OnceLock<bool> = OnceLock::new();
    *NEEDS_CONJUGATE.get_or_init(|| {
        let m = array![
            [C64::new(0.3, 0.0), C64::new(0.4, -0.7)],
            [C64::new(0.4, 0.7), C64::new(-0.2, 0.0)]
        ];
        let (values, vectors) = m
            .eigh(UPLO::Lower)
            .expect("2x2 Hermitian eigendecomposition cannot fail");
        let residual = |v: &CMatrix| -> f64 {
            let mut scaled = v.clone();
            for (mut col, &lam) in scaled.columns_mut().into_iter().zip(values.iter()) {
                col.mapv_inplace(|x| x * C64::new(lam, 0.0));
            }
            let mut vh = CMatrix::zeros((2, 2));
            for i in 0..2 {
                for j in 0..2 {
                    vh[[j, i]] = v[[i, j]].conj();
                }
            }
            (&scaled.dot(&vh) - &m)
                .iter()
                .map(|z| z.norm_sqr())
                .sum::<f64>()
                .sqrt()
        };
        let direct = residual(&vectors);
        let conjugated = residual(&vectors.mapv(|z| z.conj()));
        conjugated < direct
    })
}

/// Plain commutator `[A, B] = AB - BA`; anti-Hermitian for Hermitian inputs.
pub fn commutator(a: &HermitianOperator, b: &HermitianOperator) -> Result<CMatrix> {
    check_same_dim(a, b, "commutator")?;
    let ab = a.matrix().dot(b.matrix());
    let ba = b.matrix().dot(a.matrix());
    Ok(&ab - &ba)
}

/// Hermitian commutator `i[A, B]`, the generator of Heisenberg motion.
pub fn i_commutator(a: &HermitianOperator, b: &HermitianOperator) -> Result<HermitianOperator> {
    let c = commutator(a, b)?;
    let ic = c.mapv(|z| z * C64::new(0.0, 1.0));
    Ok(HermitianOperator::from_hermitian_part(&ic))
}

/// Heisenberg-evolved observable `A(t) = e^{iHt} A e^{-iHt}`.
pub fn heisenberg_evolve(
    a: &HermitianOperator,
    h: &HermitianOperator,
    t: f64,
) -> Result<HermitianOperator> {
    check_same_dim(a, h, "heisenberg_evolve")?;
    Ok(h.eigh()?.heisenberg(a, t))
}

/// Schroedinger-evolved state `rho(dt) = e^{-iH dt} rho e^{iH dt}`.
pub fn unitary_evolve_state(
    rho: &DensityOperator,
    h: &HermitianOperator,
    dt: f64,
) -> Result<DensityOperator> {
    check_same_dim(rho.operator(), h, "unitary_evolve_state")?;
    Ok(h.eigh()?.evolve_state(rho, dt))
}

/// Expectation value `Tr(A rho)`; real for Hermitian `A`.
pub fn expectation(a: &HermitianOperator, rho: &DensityOperator) -> f64 {
    trace_product(a.matrix(), rho.matrix())
}

/// Real part of `Tr(A B)` computed without forming the product matrix.
pub(crate) fn trace_product(a: &CMatrix, b: &CMatrix) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            let x = a[[i, j]];
            let y = b[[j, i]];
            acc += x.re * y.re - x.im * y.im;
        }
    }
    acc
}

pub(crate) fn check_same_dim(
    a: &HermitianOperator,
    b: &HermitianOperator,
    context: &str,
) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
            context: context.into(),
        });
    }
    Ok(())
}

pub(crate) fn check_same_shape(a: &CMatrix, b: &CMatrix, context: &str) -> Result<()> {
    if a.nrows() != b.nrows() || a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch {
            left: a.nrows(),
            right: b.nrows(),
            context: context.into(),
        });
    }
    Ok(())
}

/// A validated density operator: Hermitian, unit trace, positive
/// semidefinite up to roundoff.
#[derive(Debug, Clone)]
pub struct DensityOperator {
    op: HermitianOperator,
}

impl DensityOperator {
    /// Validates trace and positivity (least eigenvalue above the roundoff
    /// floor) before wrapping.
    pub fn new(op: HermitianOperator) -> Result<Self> {
        let tr = op.trace();
        if (tr - 1.0).abs() > tol::DENSITY_TRACE_ABS {
            return Err(Error::NotDensity(format!(
                "trace = {tr:.12e}, expected 1"
            )));
        }
        let (lo, _) = op.eigenvalue_range()?;
        if lo < tol::DENSITY_EIGENVALUE_FLOOR {
            return Err(Error::NotDensity(format!(
                "least eigenvalue {lo:.3e} below floor {:.1e}",
                tol::DENSITY_EIGENVALUE_FLOOR
            )));
        }
        Ok(Self { op })
    }

    /// Wraps without re-validating. For internal construction paths that
    /// preserve the invariants exactly (unitary conjugation, normalized
    /// spectral assembly).
    pub(crate) fn from_valid(op: HermitianOperator) -> Self {
        debug_assert!((op.trace() - 1.0).abs() < 1e-8);
        Self { op }
    }

    /// The underlying Hermitian operator.
    pub fn operator(&self) -> &HermitianOperator {
        &self.op
    }

    /// Raw matrix view.
    pub fn matrix(&self) -> &CMatrix {
        self.op.matrix()
    }

    /// Hilbert-space dimension.
    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    /// Von Neumann entropy `-Tr rho log rho` (natural log, k_B = 1).
    pub fn von_neumann_entropy(&self) -> Result<f64> {
        let eig = self.op.eigh()?;
        let mut s = 0.0;
        for &p in eig.values.iter() {
            if p > 0.0 {
                s -= p * p.ln();
            }
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn pauli_x() -> HermitianOperator {
        HermitianOperator::new(array![[c(0., 0.), c(1., 0.)], [c(1., 0.), c(0., 0.)]]).unwrap()
    }

    fn pauli_y() -> HermitianOperator {
        HermitianOperator::new(array![[c(0., 0.), c(0., -1.)], [c(0., 1.), c(0., 0.)]]).unwrap()
    }

    fn pauli_z() -> HermitianOperator {
        HermitianOperator::new(array![[c(1., 0.), c(0., 0.)], [c(0., 0.), c(-1., 0.)]]).unwrap()
    }

    fn frob_dist(a: &CMatrix, b: &CMatrix) -> f64 {
        (a - b).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    #[test]
    fn rejects_non_hermitian() {
        let m = array![[c(0., 0.), c(1., 0.)], [c(0.5, 0.), c(0., 0.)]];
        match HermitianOperator::new(m) {
            Err(Error::NotHermitian { .. }) => {}
            other => panic!("expected NotHermitian, got {other:?}"),
        }
    }

    #[test]
    fn rejects_non_square() {
        let m = CMatrix::zeros((2, 3));
        assert!(matches!(
            HermitianOperator::new(m),
            Err(Error::NotSquare { .. })
        ));
    }

    #[test]
    fn pauli_commutators() {
        // [sx, sy] = 2i sz, so i[sx, sy] = -2 sz.
        let isz = i_commutator(&pauli_x(), &pauli_y()).unwrap();
        let expect = pauli_z().scaled(-2.0);
        assert!(frob_dist(isz.matrix(), expect.matrix()) < 1e-14);
        // Self-commutator vanishes.
        let zero = i_commutator(&pauli_x(), &pauli_x()).unwrap();
        assert!(zero.frobenius_norm() < 1e-14);
    }

    #[test]
    fn eigh_pauli_x() {
        let eig = pauli_x().eigh().unwrap();
        assert!((eig.values[0] + 1.0).abs() < 1e-14);
        assert!((eig.values[1] - 1.0).abs() < 1e-14);
        // Round trip through the eigenbasis.
        let m = pauli_x();
        let restored = eig.from_eigenbasis(&eig.to_eigenbasis(m.matrix()));
        assert!(frob_dist(&restored, m.matrix()) < 1e-13);
    }

    #[test]
    fn eigh_reconstructs_complex_matrices() {
        // Regression guard: complex off-diagonal entries expose the
        // eigenvector convention of the LAPACK binding, which real-symmetric
        // fixtures cannot.
        for m in [
            pauli_y(),
            HermitianOperator::new(array![
                [c(0.3, 0.), c(0.4, -0.7)],
                [c(0.4, 0.7), c(-0.2, 0.)]
            ])
            .unwrap(),
            &(&pauli_y().scaled(0.9) + &pauli_x().scaled(-0.4)) + &pauli_z().scaled(0.25),
        ] {
            let eig = m.eigh().unwrap();
            let mut scaled = eig.vectors.clone();
            for (mut col, &v) in scaled.columns_mut().into_iter().zip(eig.values.iter()) {
                col.mapv_inplace(|x| x * c(v, 0.0));
            }
            let rebuilt = scaled.dot(&eig.adjoint());
            assert!(
                frob_dist(&rebuilt, m.matrix()) < 1e-13,
                "reconstruction failed"
            );
        }
    }

    #[test]
    fn heisenberg_closed_form_two_level() {
        // H = (w/2) sz rotates sx into -sy:
        // sx(t) = cos(wt) sx - sin(wt) sy.
        let omega = 1.3;
        let h = pauli_z().scaled(omega / 2.0);
        let t = 0.9 / omega; // so wt = 0.9
        let evolved = heisenberg_evolve(&pauli_x(), &h, t).unwrap();
        let expect = &pauli_x().scaled((0.9f64).cos()) - &pauli_y().scaled((0.9f64).sin());
        assert!(frob_dist(evolved.matrix(), expect.matrix()) < 1e-13);
    }

    #[test]
    fn heisenberg_group_property() {
        let h = &pauli_z().scaled(0.7) + &pauli_x().scaled(0.4);
        let a = pauli_y();
        let one = heisenberg_evolve(&a, &h, 0.3).unwrap();
        let two = heisenberg_evolve(&one, &h, 0.5).unwrap();
        let direct = heisenberg_evolve(&a, &h, 0.8).unwrap();
        assert!(frob_dist(two.matrix(), direct.matrix()) < 1e-12);
    }

    #[test]
    fn state_evolution_is_trace_preserving_and_inverse_of_heisenberg() {
        let h = &pauli_z().scaled(0.7) + &pauli_x().scaled(0.4);
        let rho_m = array![[c(0.75, 0.), c(0.1, 0.2)], [c(0.1, -0.2), c(0.25, 0.)]];
        let rho = DensityOperator::new(HermitianOperator::new(rho_m).unwrap()).unwrap();
        let a = pauli_y();
        let t = 0.61;
        // Heisenberg vs Schroedinger pictures agree on expectations.
        let lhs = expectation(&heisenberg_evolve(&a, &h, t).unwrap(), &rho);
        let rhs = expectation(&a, &unitary_evolve_state(&rho, &h, t).unwrap());
        assert!((lhs - rhs).abs() < 1e-13);
        // Trace preserved.
        let evolved = unitary_evolve_state(&rho, &h, t).unwrap();
        assert!((evolved.operator().trace() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn density_validation() {
        // Negative eigenvalue rejected.
        let bad = HermitianOperator::new(array![
            [c(1.2, 0.), c(0., 0.)],
            [c(0., 0.), c(-0.2, 0.)]
        ])
        .unwrap();
        assert!(matches!(
            DensityOperator::new(bad),
            Err(Error::NotDensity(_))
        ));
        // Wrong trace rejected.
        let bad = HermitianOperator::new(array![
            [c(0.9, 0.), c(0., 0.)],
            [c(0., 0.), c(0.2, 0.)]
        ])
        .unwrap();
        assert!(matches!(
            DensityOperator::new(bad),
            Err(Error::NotDensity(_))
        ));
    }

    #[test]
    fn von_neumann_entropy_two_level() {
        let p = 0.3f64;
        let m = array![[c(p, 0.), c(0., 0.)], [c(0., 0.), c(1.0 - p, 0.)]];
        let rho = DensityOperator::new(HermitianOperator::new(m).unwrap()).unwrap();
        let expect = -(p * p.ln() + (1.0 - p) * (1.0 - p).ln());
        assert!((rho.von_neumann_entropy().unwrap() - expect).abs() < 1e-14);
        // Pure state has zero entropy.
        let pure = array![[c(1., 0.), c(0., 0.)], [c(0., 0.), c(0., 0.)]];
        let rho = DensityOperator::new(HermitianOperator::new(pure).unwrap()).unwrap();
        assert!(rho.von_neumann_entropy().unwrap().abs() < 1e-14);
    }

    #[test]
    fn expectation_matches_trace() {
        let rho_m = array![[c(0.6, 0.), c(0.1, 0.1)], [c(0.1, -0.1), c(0.4, 0.)]];
        let rho = DensityOperator::new(HermitianOperator::new(rho_m).unwrap()).unwrap();
        // <sx> = 2 Re rho_01 = 0.2
        assert!((expectation(&pauli_x(), &rho) - 0.2).abs() < 1e-14);
        // <sz> = rho_00 - rho_11 = 0.2
        assert!((expectation(&pauli_z(), &rho) - 0.2).abs() < 1e-14);
    }
}
