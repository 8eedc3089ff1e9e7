//! Spin-chain model builders: Hamiltonians, site densities of a conserved
//! quantity, bond currents, and the conserved-operator list.
//!
//! Bond currents are generated from partial sums of the site densities,
//! `J_b = -i[H, sum_{k<=b} A_k]`, which satisfies the discrete continuity
//! equation `i[H, A_i] + (J_i - J_{i-1}) = 0` identically whenever the
//! densities sum to a conserved total. For the XXZ chain this reproduces the
//! textbook spin current on each bond (pinned by a test); on periodic chains
//! it fixes the gauge in which the wrap bond carries zero current.

use ndarray::linalg::kron;
use ndarray::prelude::*;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::operator::{commutator, i_commutator, CMatrix, HermitianOperator};
use crate::tolerances as tol;

/// Which lattice model to build, with its real coupling constants.
#[derive(Debug, Clone)]
pub enum ModelKind {
    /// Anisotropic Heisenberg chain
    /// `H = j sum_b [Sx Sx + Sy Sy + delta Sz Sz]_b + field sum_i Sz_i`
    /// with spin-1/2 operators `S = sigma/2`. Site densities are `Sz_i`;
    /// the conserved total is `Sz_total`.
    XxzChain {
        j_coupling: f64,
        delta: f64,
        field: f64,
    },
    /// Transverse-field Ising chain
    /// `H = -j sum_b [Sz Sz]_b - transverse_field sum_i Sx_i`.
    /// Site densities are local energies (bond terms split half/half between
    /// their two sites); the conserved total is `H` itself.
    TransverseIsingChain {
        j_coupling: f64,
        transverse_field: f64,
    },
    /// Caller-supplied matrices; validated, never symmetrized.
    CustomMatrices(Box<CustomModel>),
}

/// Explicit matrices for a custom model.
#[derive(Debug, Clone)]
pub struct CustomModel {
    pub hamiltonian: CMatrix,
    /// Site densities; must sum to a conserved total unless currents are
    /// supplied explicitly.
    pub observables: Vec<CMatrix>,
    /// Optional explicit bond currents (length `observables.len() - 1` on an
    /// open chain); when absent they are built from partial sums.
    pub currents: Option<Vec<CMatrix>>,
    /// Additional conserved operators beyond identity, H, and the total.
    pub conserved_extra: Vec<CMatrix>,
    /// Optional labels for the observables (defaults to `obs_<i>`).
    pub labels: Option<Vec<String>>,
}

/// Full description of the model to build.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub num_sites: usize,
    /// On-site Hilbert dimension; only 2 (spin-1/2) is supported for the
    /// lattice kinds.
    pub local_dim: usize,
    /// Periodic boundary conditions (default open).
    pub periodic: bool,
    /// Also track `H^2` as a conserved constraint (energy dispersion).
    pub include_h_squared: bool,
    /// Upper bound on the Hilbert-space dimension.
    pub dim_cap: usize,
}

/// Default dimension cap; a 12-site spin-1/2 chain saturates it.
pub const DEFAULT_DIM_CAP: usize = 4096;

impl ModelSpec {
    /// XXZ chain with open boundaries and default cap.
    pub fn xxz_chain(num_sites: usize, j_coupling: f64, delta: f64, field: f64) -> Self {
        Self {
            kind: ModelKind::XxzChain {
                j_coupling,
                delta,
                field,
            },
            num_sites,
            local_dim: 2,
            periodic: false,
            include_h_squared: false,
            dim_cap: DEFAULT_DIM_CAP,
        }
    }

    /// Transverse-field Ising chain with open boundaries and default cap.
    pub fn transverse_ising_chain(num_sites: usize, j_coupling: f64, transverse_field: f64) -> Self {
        Self {
            kind: ModelKind::TransverseIsingChain {
                j_coupling,
                transverse_field,
            },
            num_sites,
            local_dim: 2,
            periodic: false,
            include_h_squared: false,
            dim_cap: DEFAULT_DIM_CAP,
        }
    }

    /// Custom-matrix model; `num_sites` is taken from the observable count.
    pub fn custom(model: CustomModel) -> Self {
        let num_sites = model.observables.len();
        Self {
            kind: ModelKind::CustomMatrices(Box::new(model)),
            num_sites,
            local_dim: 2,
            periodic: false,
            include_h_squared: false,
            dim_cap: DEFAULT_DIM_CAP,
        }
    }

    /// Hilbert-space dimension implied by the spec.
    pub fn dimension(&self) -> Result<usize> {
        match &self.kind {
            ModelKind::CustomMatrices(m) => Ok(m.hamiltonian.nrows()),
            _ => {
                let mut dim: usize = 1;
                for _ in 0..self.num_sites {
                    dim = dim.checked_mul(self.local_dim).ok_or(Error::DimensionCap {
                        dim: usize::MAX,
                        cap: self.dim_cap,
                    })?;
                }
                Ok(dim)
            }
        }
    }
}

/// Site densities, bond currents, and conserved operators of a model.
#[derive(Debug, Clone)]
pub struct ObservableSet {
    observables: Vec<HermitianOperator>,
    observable_labels: Vec<String>,
    currents: Vec<HermitianOperator>,
    current_labels: Vec<String>,
    conserved: Vec<HermitianOperator>,
    conserved_labels: Vec<String>,
    /// Indices into `conserved` of operators that join the site densities in
    /// the macrostate constraint set (H, optionally H^2). The identity is
    /// excluded (normalization is carried by zeta0) and so is the conserved
    /// total of the densities (it is linearly dependent on them).
    macro_extras: Vec<usize>,
    periodic: bool,
}

impl ObservableSet {
    /// Raw assembly from parts, validating only shapes and Hermiticity.
    /// Physics-level guarantees (continuity, conservation) are *not* checked
    /// here; this exists for diagnostics and tests. `build_model` is the
    /// validated path.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        observables: Vec<HermitianOperator>,
        observable_labels: Vec<String>,
        currents: Vec<HermitianOperator>,
        current_labels: Vec<String>,
        conserved: Vec<HermitianOperator>,
        conserved_labels: Vec<String>,
        macro_extras: Vec<usize>,
        periodic: bool,
    ) -> Result<Self> {
        if observables.is_empty() {
            return Err(Error::InvalidModel("no observables".into()));
        }
        if observables.len() != observable_labels.len()
            || currents.len() != current_labels.len()
            || conserved.len() != conserved_labels.len()
        {
            return Err(Error::InvalidModel("label/operator count mismatch".into()));
        }
        let dim = observables[0].dim();
        for op in observables
            .iter()
            .chain(currents.iter())
            .chain(conserved.iter())
        {
            if op.dim() != dim {
                return Err(Error::DimensionMismatch {
                    left: op.dim(),
                    right: dim,
                    context: "observable set".into(),
                });
            }
        }
        if macro_extras.iter().any(|&i| i >= conserved.len()) {
            return Err(Error::InvalidModel("macro_extras index out of range".into()));
        }
        Ok(Self {
            observables,
            observable_labels,
            currents,
            current_labels,
            conserved,
            conserved_labels,
            macro_extras,
            periodic,
        })
    }

    pub fn num_sites(&self) -> usize {
        self.observables.len()
    }

    pub fn dim(&self) -> usize {
        self.observables[0].dim()
    }

    pub fn periodic(&self) -> bool {
        self.periodic
    }

    /// Site densities.
    pub fn observables(&self) -> &[HermitianOperator] {
        &self.observables
    }

    pub fn observable_labels(&self) -> &[String] {
        &self.observable_labels
    }

    /// Bond currents (bond `b` joins sites `b` and `b+1`; periodic chains
    /// carry an extra wrap bond in the zero-current gauge).
    pub fn currents(&self) -> &[HermitianOperator] {
        &self.currents
    }

    pub fn current_labels(&self) -> &[String] {
        &self.current_labels
    }

    /// Conserved operators: identity, Hamiltonian, total density, and any
    /// extras (H^2, custom).
    pub fn conserved(&self) -> &[HermitianOperator] {
        &self.conserved
    }

    pub fn conserved_labels(&self) -> &[String] {
        &self.conserved_labels
    }

    /// Constraint operators for the macrostate: site densities followed by
    /// the conserved extras (Hamiltonian, optionally H^2).
    pub fn macrostate_ops(&self) -> Vec<HermitianOperator> {
        let mut ops: Vec<_> = self.observables.clone();
        for &i in &self.macro_extras {
            ops.push(self.conserved[i].clone());
        }
        ops
    }

    /// Labels matching [`ObservableSet::macrostate_ops`].
    pub fn macrostate_labels(&self) -> Vec<String> {
        let mut labels: Vec<_> = self.observable_labels.clone();
        for &i in &self.macro_extras {
            labels.push(self.conserved_labels[i].clone());
        }
        labels
    }

    /// Discrete divergence of the currents at each site,
    /// `div J_i = J_i - J_{i-1}` with absent bonds contributing zero (open
    /// chains) or wrapping (periodic chains).
    pub fn site_divergences(&self) -> Vec<HermitianOperator> {
        let n = self.num_sites();
        let dim = self.dim();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut d = HermitianOperator::zeros(dim);
            let right = if i < self.currents.len() { Some(i) } else { None };
            let left = if i > 0 {
                Some(i - 1)
            } else if self.periodic && self.currents.len() == n {
                Some(n - 1)
            } else {
                None
            };
            if let Some(b) = right {
                d = &d + &self.currents[b];
            }
            if let Some(b) = left {
                d = &d - &self.currents[b];
            }
            out.push(d);
        }
        out
    }
}

/// A built model: Hamiltonian plus its observable set.
#[derive(Debug, Clone)]
pub struct Model {
    pub hamiltonian: HermitianOperator,
    pub observables: ObservableSet,
}

impl Model {
    pub fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }
}

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Spin-1/2 operators `S = sigma / 2`.
fn spin_half() -> (CMatrix, CMatrix, CMatrix) {
    let sx = array![[c(0.0), c(0.5)], [c(0.5), c(0.0)]];
    let sy = array![
        [c(0.0), C64::new(0.0, -0.5)],
        [C64::new(0.0, 0.5), c(0.0)]
    ];
    let sz = array![[c(0.5), c(0.0)], [c(0.0), c(-0.5)]];
    (sx, sy, sz)
}

/// Embeds a single-site operator at `site` in an `num_sites`-site chain.
fn site_operator(local: &CMatrix, site: usize, num_sites: usize) -> CMatrix {
    let left = CMatrix::eye(1 << site);
    let right = CMatrix::eye(1 << (num_sites - site - 1));
    kron(&kron(&left, local), &right)
}

/// Bond list for a chain: `(i, i+1)` pairs, plus the wrap bond if periodic.
fn bond_list(num_sites: usize, periodic: bool) -> Vec<(usize, usize)> {
    let mut bonds: Vec<_> = (0..num_sites.saturating_sub(1)).map(|i| (i, i + 1)).collect();
    if periodic && num_sites > 2 {
        bonds.push((num_sites - 1, 0));
    }
    bonds
}

/// Builds the Hamiltonian and observable set described by `spec`.
pub fn build_model(spec: &ModelSpec) -> Result<Model> {
    let dim = spec.dimension()?;
    if dim > spec.dim_cap {
        return Err(Error::DimensionCap {
            dim,
            cap: spec.dim_cap,
        });
    }
    if spec.periodic && spec.num_sites == 2 {
        return Err(Error::InvalidModel(
            "periodic boundaries need at least 3 sites (wrap bond would double a bond)".into(),
        ));
    }
    let model = match &spec.kind {
        ModelKind::XxzChain {
            j_coupling,
            delta,
            field,
        } => build_xxz(spec, *j_coupling, *delta, *field)?,
        ModelKind::TransverseIsingChain {
            j_coupling,
            transverse_field,
        } => build_transverse_ising(spec, *j_coupling, *transverse_field)?,
        ModelKind::CustomMatrices(custom) => build_custom(spec, custom)?,
    };
    validate_model(&model)?;
    Ok(model)
}

fn build_xxz(spec: &ModelSpec, j: f64, delta: f64, field: f64) -> Result<Model> {
    check_chain_params(spec, &[j, delta, field])?;
    let l = spec.num_sites;
    let dim = spec.dimension()?;
    let (sx, sy, sz) = spin_half();

    let mut h = CMatrix::zeros((dim, dim));
    for &(a, b) in &bond_list(l, spec.periodic) {
        let xx = site_operator(&sx, a, l).dot(&site_operator(&sx, b, l));
        let yy = site_operator(&sy, a, l).dot(&site_operator(&sy, b, l));
        let zz = site_operator(&sz, a, l).dot(&site_operator(&sz, b, l));
        h = h + xx.mapv(|z| z * j) + yy.mapv(|z| z * j) + zz.mapv(|z| z * (j * delta));
    }
    let mut observables = Vec::with_capacity(l);
    for i in 0..l {
        let szi = site_operator(&sz, i, l);
        h = h + szi.mapv(|z| z * field);
        observables.push(HermitianOperator::from_hermitian_part(&szi));
    }
    let hamiltonian = HermitianOperator::from_hermitian_part(&h);
    let labels = (0..l).map(|i| format!("sz_{i}")).collect();
    finish_lattice_model(spec, hamiltonian, observables, labels, "js", "sz_total")
}

fn build_transverse_ising(spec: &ModelSpec, j: f64, g: f64) -> Result<Model> {
    check_chain_params(spec, &[j, g])?;
    let l = spec.num_sites;
    let dim = spec.dimension()?;
    let (sx, _, sz) = spin_half();

    let bonds = bond_list(l, spec.periodic);
    let bond_ops: Vec<CMatrix> = bonds
        .iter()
        .map(|&(a, b)| {
            site_operator(&sz, a, l)
                .dot(&site_operator(&sz, b, l))
                .mapv(|z| z * (-j))
        })
        .collect();
    let field_ops: Vec<CMatrix> = (0..l)
        .map(|i| site_operator(&sx, i, l).mapv(|z| z * (-g)))
        .collect();

    let mut h = CMatrix::zeros((dim, dim));
    for op in bond_ops.iter().chain(field_ops.iter()) {
        h = h + op;
    }

    // Local energy density: the on-site field plus half of each adjacent
    // bond term. Summed over sites this reproduces H exactly.
    let mut observables = Vec::with_capacity(l);
    for i in 0..l {
        let mut eps = field_ops[i].clone();
        for (b, &(a, bb)) in bonds.iter().enumerate() {
            if a == i || bb == i {
                eps = eps + bond_ops[b].mapv(|z| z * 0.5);
            }
        }
        observables.push(HermitianOperator::from_hermitian_part(&eps));
    }
    let hamiltonian = HermitianOperator::from_hermitian_part(&h);
    let labels = (0..l).map(|i| format!("eloc_{i}")).collect();
    finish_lattice_model(spec, hamiltonian, observables, labels, "je", "energy_total")
}

fn check_chain_params(spec: &ModelSpec, params: &[f64]) -> Result<()> {
    if spec.num_sites == 0 {
        return Err(Error::InvalidModel("num_sites must be at least 1".into()));
    }
    if spec.local_dim != 2 {
        return Err(Error::InvalidModel(format!(
            "local_dim {} unsupported for lattice kinds (only spin-1/2)",
            spec.local_dim
        )));
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidModel("non-finite coupling".into()));
    }
    Ok(())
}

/// Common tail of the lattice builders: partial-sum currents, conserved
/// list, and final assembly.
fn finish_lattice_model(
    spec: &ModelSpec,
    hamiltonian: HermitianOperator,
    observables: Vec<HermitianOperator>,
    observable_labels: Vec<String>,
    current_prefix: &str,
    total_label: &str,
) -> Result<Model> {
    let dim = hamiltonian.dim();
    let l = observables.len();
    let n_bonds = bond_list(l, spec.periodic).len();

    let currents = partial_sum_currents(&hamiltonian, &observables, n_bonds)?;
    let current_labels = (0..n_bonds).map(|b| format!("{current_prefix}_{b}")).collect();

    let mut total = HermitianOperator::zeros(dim);
    for op in &observables {
        total = &total + op;
    }

    let mut conserved = vec![
        HermitianOperator::identity(dim),
        hamiltonian.clone(),
        total,
    ];
    let mut conserved_labels = vec![
        "identity".to_string(),
        "hamiltonian".to_string(),
        total_label.to_string(),
    ];
    let mut candidates = vec![1usize];
    if spec.include_h_squared {
        let h2 = hamiltonian.matrix().dot(hamiltonian.matrix());
        conserved.push(HermitianOperator::from_hermitian_part(&h2));
        conserved_labels.push("hamiltonian_sq".to_string());
        candidates.push(conserved.len() - 1);
    }
    let macro_extras = select_macro_extras(&observables, &conserved, &candidates);

    let observables_set = ObservableSet::from_parts(
        observables,
        observable_labels,
        currents,
        current_labels,
        conserved,
        conserved_labels,
        macro_extras,
        spec.periodic,
    )?;
    Ok(Model {
        hamiltonian,
        observables: observables_set,
    })
}

/// Picks which conserved operators join the constraint list. Candidates are
/// given by index into `conserved` (H, and H^2 when tracked); each is taken
/// only if linearly independent of the densities and earlier picks. The
/// identity never joins (normalization is separate) and the summed density
/// is always in the span of the densities.
fn select_macro_extras(
    observables: &[HermitianOperator],
    conserved: &[HermitianOperator],
    candidates: &[usize],
) -> Vec<usize> {
    let mut extras = Vec::new();
    let mut accepted: Vec<&CMatrix> = Vec::new();
    for &idx in candidates {
        let candidate = conserved[idx].matrix();
        if macro_extra_accepted(observables, &accepted, candidate) {
            accepted.push(candidate);
            extras.push(idx);
        }
    }
    extras
}

/// Bond currents from partial sums: `J_b = -i[H, sum_{k<=b} A_k]`.
fn partial_sum_currents(
    h: &HermitianOperator,
    observables: &[HermitianOperator],
    n_bonds: usize,
) -> Result<Vec<HermitianOperator>> {
    let dim = h.dim();
    let mut partial = HermitianOperator::zeros(dim);
    let mut currents = Vec::with_capacity(n_bonds);
    for b in 0..n_bonds {
        partial = &partial + &observables[b];
        let j = i_commutator(h, &partial)?; // i[H, P_b] = -(-i[H, P_b])
        currents.push(j.scaled(-1.0));
    }
    Ok(currents)
}

fn build_custom(spec: &ModelSpec, custom: &CustomModel) -> Result<Model> {
    let hamiltonian = HermitianOperator::new(custom.hamiltonian.clone())?;
    let dim = hamiltonian.dim();
    if dim > spec.dim_cap {
        return Err(Error::DimensionCap {
            dim,
            cap: spec.dim_cap,
        });
    }
    if custom.observables.is_empty() {
        return Err(Error::InvalidModel("custom model needs observables".into()));
    }
    let observables: Vec<HermitianOperator> = custom
        .observables
        .iter()
        .map(|m| HermitianOperator::new(m.clone()))
        .collect::<Result<_>>()?;
    let l = observables.len();
    let labels: Vec<String> = match &custom.labels {
        Some(names) if names.len() == l => names.clone(),
        Some(_) => return Err(Error::InvalidModel("label count mismatch".into())),
        None => (0..l).map(|i| format!("obs_{i}")).collect(),
    };

    let mut total = HermitianOperator::zeros(dim);
    for op in &observables {
        total = &total + op;
    }
    // The densities must sum to a constant of motion; otherwise there is no
    // continuity structure to build.
    let comm_norm = comm_defect(&hamiltonian, &total)?;
    if comm_norm > commutation_limit(&hamiltonian, &total) {
        return Err(Error::InvalidModel(format!(
            "custom observables do not sum to a conserved total: |[H, total]|_F = {comm_norm:.3e}"
        )));
    }

    let n_bonds = l.saturating_sub(1);
    let currents = match &custom.currents {
        Some(given) => {
            if given.len() != n_bonds {
                return Err(Error::DimensionMismatch {
                    left: given.len(),
                    right: n_bonds,
                    context: "custom currents (expected one per bond of an open chain)".into(),
                });
            }
            given
                .iter()
                .map(|m| HermitianOperator::new(m.clone()))
                .collect::<Result<Vec<_>>>()?
        }
        None => partial_sum_currents(&hamiltonian, &observables, n_bonds)?,
    };
    let current_labels = (0..n_bonds).map(|b| format!("cur_{b}")).collect();

    let mut conserved = vec![
        HermitianOperator::identity(dim),
        hamiltonian.clone(),
        total,
    ];
    let mut conserved_labels = vec![
        "identity".to_string(),
        "hamiltonian".to_string(),
        "total".to_string(),
    ];
    let mut candidates = vec![1usize];
    if spec.include_h_squared {
        let h2 = hamiltonian.matrix().dot(hamiltonian.matrix());
        conserved.push(HermitianOperator::from_hermitian_part(&h2));
        conserved_labels.push("hamiltonian_sq".to_string());
        candidates.push(conserved.len() - 1);
    }
    for (k, extra) in custom.conserved_extra.iter().enumerate() {
        conserved.push(HermitianOperator::new(extra.clone())?);
        conserved_labels.push(format!("conserved_extra_{k}"));
    }
    let macro_extras = select_macro_extras(&observables, &conserved, &candidates);

    let observables_set = ObservableSet::from_parts(
        observables,
        labels,
        currents,
        current_labels,
        conserved,
        conserved_labels,
        macro_extras,
        false,
    )?;
    Ok(Model {
        hamiltonian,
        observables: observables_set,
    })
}

fn comm_defect(a: &HermitianOperator, b: &HermitianOperator) -> Result<f64> {
    let comm = commutator(a, b)?;
    Ok(comm.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
}

fn frob(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn trace_inner(a: &CMatrix, b: &CMatrix) -> f64 {
    crate::operator::trace_product(a, b)
}

/// Distance (Frobenius) from `candidate` to the real span of `basis`,
/// via modified Gram-Schmidt in the trace inner product.
fn span_residual(basis: &[&CMatrix], candidate: &CMatrix) -> f64 {
    let mut q: Vec<CMatrix> = Vec::with_capacity(basis.len());
    for b in basis {
        let mut r = (*b).clone();
        for unit in &q {
            let coeff = trace_inner(unit, &r);
            r = r - unit.mapv(|z| z * c(coeff));
        }
        let n = frob(&r);
        if n > 1e-12 * frob(b).max(1.0) {
            r.mapv_inplace(|z| z / c(n));
            q.push(r);
        }
    }
    let mut r = candidate.clone();
    // Two projection passes for numerical safety.
    for _ in 0..2 {
        for unit in &q {
            let coeff = trace_inner(unit, &r);
            r = r - unit.mapv(|z| z * c(coeff));
        }
    }
    frob(&r)
}

/// Accepts a conserved candidate into the macrostate constraint list only if
/// it is linearly independent of the densities and prior extras. Collinear
/// candidates (e.g. a Hamiltonian that equals the summed energy densities)
/// would make the constraint covariance singular.
fn macro_extra_accepted(
    observables: &[HermitianOperator],
    accepted: &[&CMatrix],
    candidate: &CMatrix,
) -> bool {
    let mut basis: Vec<&CMatrix> = observables.iter().map(|o| o.matrix()).collect();
    basis.extend_from_slice(accepted);
    span_residual(&basis, candidate) > 1e-10 * frob(candidate).max(1.0)
}

fn commutation_limit(h: &HermitianOperator, op: &HermitianOperator) -> f64 {
    tol::COMMUTATION_REL * (1.0 + h.frobenius_norm()) * (1.0 + op.frobenius_norm())
}

/// Post-build validation: conserved operators commute with H, site densities
/// are linearly independent, and custom-supplied currents obey continuity.
fn validate_model(model: &Model) -> Result<()> {
    let h = &model.hamiltonian;
    let obs = &model.observables;
    for (op, label) in obs.conserved().iter().zip(obs.conserved_labels()) {
        let defect = comm_defect(h, op)?;
        if defect > commutation_limit(h, op) {
            return Err(Error::InvalidModel(format!(
                "conserved operator {label} does not commute with H: |[H, C]|_F = {defect:.3e}"
            )));
        }
    }

    // Gram condition number of the site densities.
    let n = obs.observables().len();
    let mut gram = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            gram[[i, j]] = crate::operator::trace_product(
                obs.observables()[i].matrix(),
                obs.observables()[j].matrix(),
            );
        }
    }
    use ndarray_linalg::Eigh as _;
    let (vals, _) = gram.eigh(ndarray_linalg::UPLO::Lower)?;
    let max = vals[vals.len() - 1];
    let min = vals[0];
    if !(max > 0.0) || min <= 0.0 || max / min > tol::GRAM_CONDITION_CAP {
        return Err(Error::InvalidModel(format!(
            "site densities are linearly dependent (Gram eigenvalues in [{min:.3e}, {max:.3e}])"
        )));
    }

    // Continuity for whatever currents the set carries.
    let residuals = continuity_residual(h, obs)?;
    let limit = tol::CONTINUITY_REL * h.frobenius_norm();
    if let Some((site, worst)) = residuals
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
    {
        if *worst > limit {
            return Err(Error::InvalidModel(format!(
                "continuity violated at site {site}: residual {worst:.3e} exceeds {limit:.3e}"
            )));
        }
    }
    Ok(())
}

/// Per-site continuity defect `|i[H, A_i] + div J_i|_F`.
///
/// Zero (to roundoff) for builder-generated currents; strictly positive when
/// the currents do not transport the densities.
pub fn continuity_residual(h: &HermitianOperator, obs: &ObservableSet) -> Result<Vec<f64>> {
    if h.dim() != obs.dim() {
        return Err(Error::DimensionMismatch {
            left: h.dim(),
            right: obs.dim(),
            context: "continuity_residual".into(),
        });
    }
    let divergences = obs.site_divergences();
    let mut out = Vec::with_capacity(obs.num_sites());
    for (a, d) in obs.observables().iter().zip(divergences.iter()) {
        let lhs = i_commutator(h, a)?;
        out.push((&lhs + d).frobenius_norm());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sorted_eigenvalues(op: &HermitianOperator) -> Vec<f64> {
        let eig = op.eigh().unwrap();
        eig.values.to_vec()
    }

    #[test]
    fn xxz_two_site_spectrum() {
        // J = 1, delta = 0.5, no field: eigenvalues -5/8, 1/8, 1/8, 3/8.
        let model = build_model(&ModelSpec::xxz_chain(2, 1.0, 0.5, 0.0)).unwrap();
        let vals = sorted_eigenvalues(&model.hamiltonian);
        let expect = [-0.625, 0.125, 0.125, 0.375];
        for (v, e) in vals.iter().zip(expect.iter()) {
            assert!((v - e).abs() < 1e-12, "got {vals:?}");
        }
        // Uniform field shifts the polarized states by +-field.
        let model = build_model(&ModelSpec::xxz_chain(2, 1.0, 0.5, 0.3)).unwrap();
        let vals = sorted_eigenvalues(&model.hamiltonian);
        let expect = [-0.625, -0.175, 0.375, 0.425];
        for (v, e) in vals.iter().zip(expect.iter()) {
            assert!((v - e).abs() < 1e-12, "got {vals:?}");
        }
    }

    #[test]
    fn xxz_four_site_frozen_extremes() {
        let model = build_model(&ModelSpec::xxz_chain(4, 1.0, 0.5, 0.3)).unwrap();
        let vals = sorted_eigenvalues(&model.hamiltonian);
        assert!((vals[0] - (-1.3560859980050624)).abs() < 1e-12);
        assert!((vals[15] - 1.0653882032022073).abs() < 1e-12);
        // Tr H^2 = 2.25 * 3 bonds + 0.09 * 16 = 8.19 exactly.
        let tr_h2: f64 = vals.iter().map(|v| v * v).sum();
        assert!((tr_h2 - 8.19).abs() < 1e-12);
    }

    #[test]
    fn transverse_ising_two_site_spectrum() {
        let model = build_model(&ModelSpec::transverse_ising_chain(2, 1.1, 0.6)).unwrap();
        let vals = sorted_eigenvalues(&model.hamiltonian);
        let expect = [
            -0.66001893912220422,
            -0.275,
            0.275,
            0.66001893912220422,
        ];
        for (v, e) in vals.iter().zip(expect.iter()) {
            assert!((v - e).abs() < 1e-12, "got {vals:?}");
        }
    }

    #[test]
    fn conserved_operators_commute() {
        for spec in [
            ModelSpec::xxz_chain(4, 1.0, 0.5, 0.3),
            ModelSpec::transverse_ising_chain(4, 1.1, 0.6),
        ] {
            let model = build_model(&spec).unwrap();
            for op in model.observables.conserved() {
                let defect = comm_defect(&model.hamiltonian, op).unwrap();
                assert!(defect <= commutation_limit(&model.hamiltonian, op));
            }
        }
    }

    #[test]
    fn continuity_holds_for_built_currents() {
        for spec in [
            ModelSpec::xxz_chain(5, 1.0, 0.5, 0.3),
            ModelSpec::transverse_ising_chain(4, 1.1, 0.6),
            {
                let mut s = ModelSpec::xxz_chain(4, 1.0, 0.5, 0.0);
                s.periodic = true;
                s
            },
        ] {
            let model = build_model(&spec).unwrap();
            let limit = tol::CONTINUITY_REL * model.hamiltonian.frobenius_norm();
            let residuals =
                continuity_residual(&model.hamiltonian, &model.observables).unwrap();
            for r in residuals {
                assert!(r <= limit, "residual {r} above {limit}");
            }
        }
    }

    #[test]
    fn xxz_current_matches_textbook_formula() {
        // On an open XXZ chain, J_b = j (Sx_b Sy_{b+1} - Sy_b Sx_{b+1}).
        let j = 1.0;
        let l = 4;
        let model = build_model(&ModelSpec::xxz_chain(l, j, 0.5, 0.3)).unwrap();
        let (sx, sy, _) = spin_half();
        for b in 0..l - 1 {
            let expect = site_operator(&sx, b, l).dot(&site_operator(&sy, b + 1, l))
                - site_operator(&sy, b, l).dot(&site_operator(&sx, b + 1, l));
            let expect = expect.mapv(|z| z * j);
            let diff = model.observables.currents()[b].matrix() - &expect;
            let dist = diff.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            assert!(dist < 1e-12, "bond {b}: distance {dist}");
        }
    }

    #[test]
    fn zeroed_currents_give_positive_residuals() {
        let model = build_model(&ModelSpec::xxz_chain(4, 1.0, 0.5, 0.0)).unwrap();
        let obs = &model.observables;
        let dim = obs.dim();
        let broken = ObservableSet::from_parts(
            obs.observables().to_vec(),
            obs.observable_labels().to_vec(),
            vec![HermitianOperator::zeros(dim); obs.currents().len()],
            obs.current_labels().to_vec(),
            obs.conserved().to_vec(),
            obs.conserved_labels().to_vec(),
            vec![1],
            false,
        )
        .unwrap();
        let residuals = continuity_residual(&model.hamiltonian, &broken).unwrap();
        // Interior sites transport spin, so killing the currents must leave
        // a strictly positive defect.
        assert!(residuals.iter().all(|&r| r > 1e-3));
    }

    #[test]
    fn custom_non_hermitian_rejected() {
        let mut h = CMatrix::eye(2);
        h[[0, 1]] = C64::new(0.3, 0.0); // upper triangle only: not Hermitian
        let custom = CustomModel {
            hamiltonian: h,
            observables: vec![CMatrix::eye(2)],
            currents: None,
            conserved_extra: vec![],
            labels: None,
        };
        match build_model(&ModelSpec::custom(custom)) {
            Err(Error::NotHermitian { .. }) => {}
            other => panic!("expected NotHermitian, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_observables_rejected() {
        // Two copies of the conserved total: each commutes with H (so the
        // conservation precheck passes), but the Gram matrix is singular.
        let model = build_model(&ModelSpec::xxz_chain(2, 1.0, 0.5, 0.0)).unwrap();
        let total = model.observables.observables()[0].matrix()
            + model.observables.observables()[1].matrix();
        let custom = CustomModel {
            hamiltonian: model.hamiltonian.matrix().clone(),
            observables: vec![total.clone(), total],
            currents: None,
            conserved_extra: vec![],
            labels: None,
        };
        match build_model(&ModelSpec::custom(custom)) {
            Err(Error::InvalidModel(msg)) => {
                assert!(msg.contains("linearly dependent"), "msg: {msg}")
            }
            other => panic!("expected InvalidModel, got {other:?}"),
        }
    }

    #[test]
    fn custom_bad_currents_rejected() {
        // Identity currents cannot transport anything: continuity fails.
        let model = build_model(&ModelSpec::xxz_chain(3, 1.0, 0.5, 0.0)).unwrap();
        let dim = model.dim();
        let custom = CustomModel {
            hamiltonian: model.hamiltonian.matrix().clone(),
            observables: model
                .observables
                .observables()
                .iter()
                .map(|o| o.matrix().clone())
                .collect(),
            currents: Some(vec![CMatrix::eye(dim); 2]),
            conserved_extra: vec![],
            labels: None,
        };
        match build_model(&ModelSpec::custom(custom)) {
            Err(Error::InvalidModel(msg)) => assert!(msg.contains("continuity"), "msg: {msg}"),
            other => panic!("expected InvalidModel, got {other:?}"),
        }
    }

    #[test]
    fn dimension_cap_enforced() {
        let spec = ModelSpec::xxz_chain(13, 1.0, 0.5, 0.0); // 8192 > 4096
        assert!(matches!(
            build_model(&spec),
            Err(Error::DimensionCap { .. })
        ));
    }

    #[test]
    fn h_squared_extra_included_when_requested() {
        let mut spec = ModelSpec::xxz_chain(3, 1.0, 0.5, 0.2);
        spec.include_h_squared = true;
        let model = build_model(&spec).unwrap();
        let labels = model.observables.macrostate_labels();
        assert_eq!(
            labels,
            vec!["sz_0", "sz_1", "sz_2", "hamiltonian", "hamiltonian_sq"]
        );
        assert_eq!(model.observables.macrostate_ops().len(), 5);
    }

    #[test]
    fn collinear_hamiltonian_dropped_from_constraints() {
        // Energy densities sum to H, so H must not be double-counted in the
        // constraint list; H^2 is genuinely new and stays.
        let mut spec = ModelSpec::transverse_ising_chain(3, 1.1, 0.6);
        let model = build_model(&spec).unwrap();
        assert_eq!(
            model.observables.macrostate_labels(),
            vec!["eloc_0", "eloc_1", "eloc_2"]
        );
        spec.include_h_squared = true;
        let model = build_model(&spec).unwrap();
        assert_eq!(
            model.observables.macrostate_labels(),
            vec!["eloc_0", "eloc_1", "eloc_2", "hamiltonian_sq"]
        );
    }

    #[test]
    fn transverse_ising_densities_sum_to_hamiltonian() {
        let model = build_model(&ModelSpec::transverse_ising_chain(4, 1.1, 0.6)).unwrap();
        let mut total = HermitianOperator::zeros(model.dim());
        for op in model.observables.observables() {
            total = &total + op;
        }
        let diff = (&total - &model.hamiltonian).frobenius_norm();
        assert!(diff < 1e-12);
    }
}
