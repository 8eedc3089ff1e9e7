//! Exponential macrostate states `w = exp(-zeta0 - sum_j zeta_j A_j)` and
//! the Kubo--Mori geometry around them.
//!
//! All spectral work happens on the *normalized* exponent: with
//! `c_m = lambda_m - log Z` the populations are `p_m = exp(c_m)`, which sum
//! to one and never overflow regardless of how large the multipliers are.
//! The Kubo--Mori kernel then takes the overflow-free form
//! `k(c_m, c_n) = (p_m - p_n) / (c_m - c_n)`.

use ndarray::prelude::*;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::operator::{
    check_same_shape, trace_product, CMatrix, DensityOperator, EigenSystem, HermitianOperator,
};
use crate::tolerances as tol;

/// Multipliers pairing with a fixed operator list. The normalization
/// multiplier is not part of the list; it is determined by the trace
/// condition and reported as [`GibbsState::log_partition`].
#[derive(Debug, Clone, PartialEq)]
pub struct MacrostateParams {
    pub zeta: Vec<f64>,
}

impl MacrostateParams {
    pub fn new(zeta: Vec<f64>) -> Self {
        Self { zeta }
    }

    pub fn len(&self) -> usize {
        self.zeta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.zeta.is_empty()
    }
}

impl From<Vec<f64>> for MacrostateParams {
    fn from(zeta: Vec<f64>) -> Self {
        Self { zeta }
    }
}

/// A normalized exponential state together with the spectral data needed for
/// expectations, entropy, and Kubo--Mori inner products.
#[derive(Debug, Clone)]
pub struct GibbsState {
    params: MacrostateParams,
    ops: Vec<HermitianOperator>,
    /// Eigensystem of the normalized exponent `log w`; its eigenvalues are
    /// the log-populations `c_m = lambda_m - log Z`.
    eig: EigenSystem,
    log_z: f64,
    populations: Array1<f64>,
    state: DensityOperator,
    entropy: f64,
}

impl GibbsState {
    /// Builds `w = exp(-sum_j zeta[j] ops[j]) / Z`.
    pub fn new(ops: &[HermitianOperator], zeta: &[f64]) -> Result<Self> {
        if ops.is_empty() {
            return Err(Error::InvalidModel("empty operator list".into()));
        }
        if ops.len() != zeta.len() {
            return Err(Error::DimensionMismatch {
                left: ops.len(),
                right: zeta.len(),
                context: "operators vs multipliers".into(),
            });
        }
        if zeta.iter().any(|z| !z.is_finite()) {
            return Err(Error::NumericalBreakdown("non-finite multiplier".into()));
        }
        let dim = ops[0].dim();
        let mut exponent = CMatrix::zeros((dim, dim));
        for (op, &z) in ops.iter().zip(zeta) {
            check_same_shape(op.matrix(), &exponent, "exponent assembly")?;
            exponent = exponent + op.matrix().mapv(|v| v * C64::new(-z, 0.0));
        }
        let exponent = HermitianOperator::from_hermitian_part(&exponent);
        let mut state = Self::from_exponent_op(&exponent)?;
        state.params = MacrostateParams::new(zeta.to_vec());
        state.ops = ops.to_vec();
        state.check_entropy_duality()?;
        Ok(state)
    }

    /// Builds `exp(M)/Tr exp(M)` from a raw Hermitian exponent `M`.
    /// The resulting state stores `ops = [M]`, `zeta = [-1]`.
    pub fn from_exponent(exponent: &HermitianOperator) -> Result<Self> {
        let mut state = Self::from_exponent_op(exponent)?;
        state.params = MacrostateParams::new(vec![-1.0]);
        state.ops = vec![exponent.clone()];
        state.check_entropy_duality()?;
        Ok(state)
    }

    fn from_exponent_op(exponent: &HermitianOperator) -> Result<Self> {
        let eig_raw = exponent.eigh()?;
        let log_z = log_sum_exp(&eig_raw.values);
        if !log_z.is_finite() {
            return Err(Error::NumericalBreakdown(
                "log partition function is not finite".into(),
            ));
        }
        let c = eig_raw.values.mapv(|v| v - log_z);
        let populations = c.mapv(f64::exp);
        let dim = exponent.dim();

        // rho = V diag(p) V^dagger
        let mut scaled = eig_raw.vectors.clone();
        for (mut col, &p) in scaled.columns_mut().into_iter().zip(populations.iter()) {
            col.mapv_inplace(|v| v * C64::new(p, 0.0));
        }
        let vt = eig_raw.adjoint();
        let rho = scaled.dot(&vt);

        // Guard the spectral decomposition: rebuilding the exponent from the
        // eigensystem must reproduce it.
        let mut rebuilt = eig_raw.vectors.clone();
        for (mut col, &v) in rebuilt.columns_mut().into_iter().zip(eig_raw.values.iter()) {
            col.mapv_inplace(|x| x * C64::new(v, 0.0));
        }
        let rebuilt = rebuilt.dot(&vt);
        let err = (&rebuilt - exponent.matrix())
            .iter()
            .map(|z| z.norm_sqr())
            .sum::<f64>()
            .sqrt();
        let scale = exponent.frobenius_norm().max(1.0);
        if err > tol::STATE_RECONSTRUCTION_ABS * scale * (dim as f64) {
            return Err(Error::NumericalBreakdown(format!(
                "eigendecomposition reconstruction error {err:.3e}"
            )));
        }

        let entropy = -populations
            .iter()
            .map(|&p| if p > 0.0 { p * p.ln() } else { 0.0 })
            .sum::<f64>();

        Ok(Self {
            params: MacrostateParams::new(vec![]),
            ops: vec![],
            eig: EigenSystem {
                values: c,
                vectors: eig_raw.vectors,
            },
            log_z,
            populations,
            state: DensityOperator::from_valid(HermitianOperator::from_hermitian_part(&rho)),
            entropy,
        })
    }

    /// Entropy must agree between its spectral form `-sum p ln p` and the
    /// multiplier form `log Z + sum_j zeta_j <A_j>`; a mismatch means the
    /// spectral data are inconsistent.
    fn check_entropy_duality(&self) -> Result<()> {
        let dual = self.entropy_from_multipliers()?;
        if (dual - self.entropy).abs() > tol::ENTROPY_AGREEMENT_ABS {
            return Err(Error::NumericalBreakdown(format!(
                "entropy forms disagree: spectral {} vs multiplier {}",
                self.entropy, dual
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.eig.dim()
    }

    pub fn params(&self) -> &MacrostateParams {
        &self.params
    }

    pub fn constraint_ops(&self) -> &[HermitianOperator] {
        &self.ops
    }

    /// Log partition function (the normalization multiplier).
    pub fn log_partition(&self) -> f64 {
        self.log_z
    }

    /// Eigensystem of the normalized exponent; eigenvalues are the
    /// log-populations.
    pub fn eigensystem(&self) -> &EigenSystem {
        &self.eig
    }

    pub fn populations(&self) -> &Array1<f64> {
        &self.populations
    }

    pub fn state(&self) -> &DensityOperator {
        &self.state
    }

    pub fn into_state(self) -> DensityOperator {
        self.state
    }

    /// `Tr(w A)`.
    pub fn expectation(&self, op: &HermitianOperator) -> Result<f64> {
        check_same_shape(self.state.matrix(), op.matrix(), "expectation")?;
        Ok(trace_product(self.state.matrix(), op.matrix()))
    }

    /// Von Neumann entropy, computed from the populations. Construction
    /// guarantees this agrees with `log Z + zeta . <A>` to high accuracy.
    pub fn entropy(&self) -> f64 {
        self.entropy
    }

    /// Entropy in its multiplier form `log Z + sum_j zeta_j <A_j>`.
    pub fn entropy_from_multipliers(&self) -> Result<f64> {
        let mut s = self.log_z;
        for (op, &z) in self.ops.iter().zip(&self.params.zeta) {
            s += z * self.expectation(op)?;
        }
        Ok(s)
    }

    /// Kernel matrix `K_mn = k(c_m, c_n)` of the divided-difference kernel
    /// `k(x, y) = (e^x - e^y)/(x - y)` over the log-populations.
    fn kernel_matrix(&self) -> Array2<f64> {
        let c = &self.eig.values;
        let p = &self.populations;
        let n = c.len();
        let mut k = Array2::<f64>::zeros((n, n));
        for m in 0..n {
            for nn in 0..n {
                let d = c[m] - c[nn];
                k[[m, nn]] = if d.abs() > tol::KUBO_DEGENERATE_GAP {
                    (p[m] - p[nn]) / d
                } else {
                    // sinh(d/2)/(d/2) expansion around the diagonal.
                    ((c[m] + c[nn]) / 2.0).exp() * (1.0 + d * d / 24.0)
                };
            }
        }
        k
    }

    /// Kubo--Mori inner product
    /// `<A, B> = int_0^1 Tr[w^u A w^(1-u) B] du - <A><B>`.
    ///
    /// Symmetric, bilinear, and positive semidefinite; for operators that
    /// commute with the state it reduces to the classical covariance.
    pub fn kubo_inner(&self, a: &HermitianOperator, b: &HermitianOperator) -> Result<f64> {
        check_same_shape(a.matrix(), self.state.matrix(), "kubo_inner")?;
        check_same_shape(b.matrix(), self.state.matrix(), "kubo_inner")?;
        let at = self.eig.to_eigenbasis(a.matrix());
        let bt = self.eig.to_eigenbasis(b.matrix());
        Ok(self.kubo_from_transformed(&at, &bt))
    }

    /// Same as [`GibbsState::kubo_inner`] but on operators already rotated
    /// into the exponent eigenbasis; lets callers amortize the transforms.
    pub fn kubo_inner_in_eigenbasis(&self, at: &CMatrix, bt: &CMatrix) -> Result<f64> {
        check_same_shape(at, self.state.matrix(), "kubo_inner_in_eigenbasis")?;
        check_same_shape(bt, self.state.matrix(), "kubo_inner_in_eigenbasis")?;
        Ok(self.kubo_from_transformed(at, bt))
    }

    fn kubo_from_transformed(&self, at: &CMatrix, bt: &CMatrix) -> f64 {
        let k = self.kernel_matrix();
        let n = self.dim();
        let mut raw = 0.0;
        for m in 0..n {
            for nn in 0..n {
                raw += (at[[m, nn]] * bt[[nn, m]]).re * k[[m, nn]];
            }
        }
        let ea = self.mean_from_transformed(at);
        let eb = self.mean_from_transformed(bt);
        raw - ea * eb
    }

    fn mean_from_transformed(&self, at: &CMatrix) -> f64 {
        self.populations
            .iter()
            .zip(at.diag().iter())
            .map(|(&p, d)| p * d.re)
            .sum()
    }

    /// Gram matrix `K_jl = <A_j, A_l>` of the Kubo--Mori product over `ops`.
    /// Each operator is rotated into the eigenbasis once.
    pub fn kubo_covariance(&self, ops: &[HermitianOperator]) -> Result<Array2<f64>> {
        let transformed: Vec<CMatrix> = ops
            .iter()
            .map(|op| {
                check_same_shape(op.matrix(), self.state.matrix(), "kubo_covariance")?;
                Ok(self.eig.to_eigenbasis(op.matrix()))
            })
            .collect::<Result<_>>()?;
        let n = ops.len();
        let mut cov = Array2::<f64>::zeros((n, n));
        for j in 0..n {
            for l in j..n {
                let v = self.kubo_from_transformed(&transformed[j], &transformed[l]);
                cov[[j, l]] = v;
                cov[[l, j]] = v;
            }
        }
        Ok(cov)
    }

    /// The Hermitian operator `Y` dual to `a` under the Kubo--Mori product:
    /// `Re Tr(Y B) = <a, B>` for every Hermitian `B`, in any basis.
    ///
    /// Lets a caller evaluate many inner products against a fixed `a` as
    /// plain traces without re-entering the eigenbasis.
    pub fn kubo_dual(&self, a: &HermitianOperator) -> Result<CMatrix> {
        check_same_shape(a.matrix(), self.state.matrix(), "kubo_dual")?;
        let at = self.eig.to_eigenbasis(a.matrix());
        let k = self.kernel_matrix();
        let n = self.dim();
        let mut yt = CMatrix::zeros((n, n));
        for m in 0..n {
            for nn in 0..n {
                yt[[m, nn]] = at[[m, nn]] * C64::new(k[[m, nn]], 0.0);
            }
        }
        let mut y = self.eig.from_eigenbasis(&yt);
        // Absorb the centering term -<a> w.
        let ea = self.mean_from_transformed(&at);
        y = y - self.state.matrix().mapv(|v| v * C64::new(ea, 0.0));
        Ok(y)
    }

    /// First-order cumulant expansion of `<probe>` in the state obtained by
    /// adding `perturbation` to the exponent of `self` (and renormalizing):
    /// `<probe> + <probe, perturbation>`.
    pub fn cumulant_expectation(
        &self,
        probe: &HermitianOperator,
        perturbation: &HermitianOperator,
    ) -> Result<f64> {
        Ok(self.expectation(probe)? + self.kubo_inner(probe, perturbation)?)
    }
}

/// Convenience wrapper over [`GibbsState::new`].
pub fn gibbs_state(ops: &[HermitianOperator], zeta: &[f64]) -> Result<GibbsState> {
    GibbsState::new(ops, zeta)
}

fn log_sum_exp(values: &Array1<f64>) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
