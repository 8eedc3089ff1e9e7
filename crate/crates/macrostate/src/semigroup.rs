//! Reduced description against the constants of motion.
//!
//! At a given state the driven mode observables are split into a component
//! inside the span of the conserved quantities (plus the identity) and a
//! Kubo-orthogonal remainder ([`decompose`]). A coarse-grained generator is
//! then built from a finite Heisenberg difference over a window `tau`
//! ([`coarse_grained_generator`]), and the reduced dynamics advances only
//! the orthogonal expectations, re-solving the multipliers after every step
//! so the state stays in Gibbs form throughout ([`reduced_trajectory`]).
//! Whether the generator expectation really is `tau`-independent can be
//! checked with [`tau_independence_diagnostic`].

use ndarray::prelude::*;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::evolution::{finite_difference_rows, record_node, MacrostateSystem, Trajectory};
use crate::gibbs::GibbsState;
use crate::maxent::{InversionSettings, MacrostateProjector};
use crate::operator::{CMatrix, EigenSystem, HermitianOperator};
use crate::tolerances as tol;

/// Floor for relative-spread denominators, so a diagnostic over an exactly
/// stationary state reports a clean plateau instead of 0/0.
const SPREAD_FLOOR: f64 = 1e-12;

/// Kubo form with the mean part kept: the centered product plus the product
/// of means. Under this form the identity is a unit vector, so the span of
/// the constants of motion *including the identity* is nondegenerate, and
/// projecting an observable off that span removes both its mean and its
/// conserved content. Orthogonality in this form implies orthogonality of
/// the remainder to every conserved operator in the centered form as well,
/// because the remainder has zero mean.
fn kubo_full(g: &GibbsState, a: &HermitianOperator, b: &HermitianOperator) -> Result<f64> {
    Ok(g.kubo_inner(a, b)? + g.expectation(a)? * g.expectation(b)?)
}

/// One observable split into its component inside the conserved span and
/// the Kubo-orthogonal remainder. The two parts sum to the original
/// operator exactly (they are built by subtraction).
#[derive(Debug, Clone)]
pub struct ObservableSplit {
    pub parallel: HermitianOperator,
    pub orthogonal: HermitianOperator,
}

/// Kubo-orthogonal decomposition of a set of observables against the
/// conserved span at one state. The state dependence is deliberate: the
/// underlying inner product moves with the multipliers, so callers
/// recompute the decomposition whenever the state changes.
#[derive(Debug, Clone)]
pub struct OrthogonalDecomposition {
    parallel_basis: Vec<HermitianOperator>,
    dropped: Vec<usize>,
    components: Vec<ObservableSplit>,
    gram_parallel: Array2<f64>,
}

impl OrthogonalDecomposition {
    /// Orthonormalized spanning operators of the conserved-plus-identity
    /// subspace, in the mean-kept Kubo form.
    pub fn parallel_basis(&self) -> &[HermitianOperator] {
        &self.parallel_basis
    }

    /// Indices (into identity-then-conserved input order) of candidate
    /// parallel vectors dropped as linearly dependent.
    pub fn dropped(&self) -> &[usize] {
        &self.dropped
    }

    /// Per-observable splits, in input order.
    pub fn components(&self) -> &[ObservableSplit] {
        &self.components
    }

    /// Gram matrix of the raw parallel inputs (identity first, then the
    /// conserved operators) in the mean-kept Kubo form — a conditioning
    /// diagnostic for the subspace.
    pub fn gram_parallel(&self) -> &Array2<f64> {
        &self.gram_parallel
    }
}

/// Splits each observable into its component inside the span of
/// `{identity} ∪ conserved` and the Kubo-orthogonal remainder, at the state
/// `g`.
///
/// The span is orthonormalized by a two-pass Gram–Schmidt in the mean-kept
/// Kubo form; candidates whose residual norm falls below the drop
/// threshold are discarded and reported. Fails only if *every* candidate
/// collapses, which cannot happen for a valid state (the identity always
/// has unit norm) unless the inputs are dimensionally inconsistent.
pub fn decompose(
    observables: &[HermitianOperator],
    conserved: &[HermitianOperator],
    g: &GibbsState,
) -> Result<OrthogonalDecomposition> {
    let dim = g.dim();
    for op in observables.iter().chain(conserved) {
        if op.dim() != dim {
            return Err(Error::DimensionMismatch {
                left: op.dim(),
                right: dim,
                context: "decomposition operators vs state".into(),
            });
        }
    }
    let mut raw: Vec<HermitianOperator> = Vec::with_capacity(conserved.len() + 1);
    raw.push(HermitianOperator::identity(dim));
    raw.extend(conserved.iter().cloned());

    let p = raw.len();
    let mut gram = Array2::zeros((p, p));
    for i in 0..p {
        for j in i..p {
            let v = kubo_full(g, &raw[i], &raw[j])?;
            gram[[i, j]] = v;
            gram[[j, i]] = v;
        }
    }

    let drop2 = tol::ORTHOGONALITY_DROP * tol::ORTHOGONALITY_DROP;
    let mut basis: Vec<HermitianOperator> = Vec::new();
    let mut dropped = Vec::new();
    for (idx, v) in raw.iter().enumerate() {
        let mut u = v.clone();
        for _ in 0..2 {
            let mut m = u.matrix().clone();
            for e in &basis {
                let c = kubo_full(g, e, &u)?;
                m = m - &e.matrix().mapv(|z| z * C64::new(c, 0.0));
            }
            u = HermitianOperator::new(m)?;
        }
        let n2 = kubo_full(g, &u, &u)?;
        if n2 <= drop2 {
            dropped.push(idx);
            continue;
        }
        let scale = 1.0 / n2.sqrt();
        basis.push(HermitianOperator::new(
            u.matrix().mapv(|z| z * C64::new(scale, 0.0)),
        )?);
    }
    if basis.is_empty() {
        return Err(Error::SingularCovariance(
            "parallel span fully degenerate: every candidate collapsed under the Kubo form"
                .into(),
        ));
    }

    let mut components = Vec::with_capacity(observables.len());
    for a in observables {
        let mut par = CMatrix::zeros((dim, dim));
        for e in &basis {
            let c = kubo_full(g, e, a)?;
            par = par + e.matrix().mapv(|z| z * C64::new(c, 0.0));
        }
        let orth = a.matrix() - &par;
        components.push(ObservableSplit {
            parallel: HermitianOperator::new(par)?,
            orthogonal: HermitianOperator::new(orth)?,
        });
    }
    Ok(OrthogonalDecomposition {
        parallel_basis: basis,
        dropped,
        components,
        gram_parallel: gram,
    })
}

/// Decomposition of a system's driven constraint operators against its
/// conserved ones, at the state `g`. Component order follows the driven
/// operators' order within `sys.ops()`.
pub fn decompose_system(
    sys: &MacrostateSystem,
    g: &GibbsState,
) -> Result<OrthogonalDecomposition> {
    let driven: Vec<HermitianOperator> = sys
        .ops()
        .iter()
        .zip(sys.conserved())
        .filter(|(_, &c)| !c)
        .map(|(op, _)| op.clone())
        .collect();
    let cons: Vec<HermitianOperator> = sys
        .ops()
        .iter()
        .zip(sys.conserved())
        .filter(|(_, &c)| c)
        .map(|(op, _)| op.clone())
        .collect();
    decompose(&driven, &cons, g)
}

/// The coarse-grained generator applied to one observable: the Heisenberg
/// difference quotient `(a(tau) - a(0)) / tau`. As `tau -> 0` this tends to
/// `i[H, a]` at first order in `tau`; trace and Hermiticity are preserved
/// for every `tau`.
pub fn coarse_grained_generator(
    a: &HermitianOperator,
    h_eig: &EigenSystem,
    tau: f64,
) -> Result<HermitianOperator> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidSettings(format!(
            "coarse-graining time {tau} must be positive"
        )));
    }
    let evolved = h_eig.heisenberg(a, tau);
    HermitianOperator::new(
        (evolved.matrix() - a.matrix()).mapv(|z| z / C64::new(tau, 0.0)),
    )
}

/// Outcome of one reduced-dynamics step.
#[derive(Debug)]
pub struct ReducedStep {
    /// Multipliers solved from the updated targets.
    pub zeta: Array1<f64>,
    /// Expectation targets after the update, per constraint operator.
    pub targets: Array1<f64>,
    /// Generator expectations `Tr[(L' a_perp) w]` per constraint operator;
    /// conserved rows are exactly zero.
    pub rates: Array1<f64>,
    /// The Gibbs state realizing the updated targets.
    pub state: GibbsState,
}

/// Advances the reduced dynamics by one step of size `dt` from the state
/// with multipliers `zeta`: each driven expectation moves by
/// `dt * Tr[(L' a_perp) w]`, conserved expectations are copied unchanged,
/// and the multipliers are re-solved so the state stays in Gibbs form. An
/// inversion failure means the targets left the realizable set and is
/// surfaced as-is rather than clipped.
pub fn reduced_dynamics_step(
    sys: &MacrostateSystem,
    zeta: &[f64],
    tau: f64,
    dt: f64,
    settings: InversionSettings,
) -> Result<ReducedStep> {
    let g = sys.gibbs(zeta)?;
    let dec = decompose_system(sys, &g)?;
    let mut projector = sys.projector(settings)?;
    reduced_step_at(sys, &g, zeta, &dec, tau, dt, &mut projector)
}

/// The step body, for callers that already hold the state, its
/// decomposition, and a (warm-startable) projector.
pub fn reduced_step_at(
    sys: &MacrostateSystem,
    g: &GibbsState,
    zeta: &[f64],
    dec: &OrthogonalDecomposition,
    tau: f64,
    dt: f64,
    projector: &mut MacrostateProjector,
) -> Result<ReducedStep> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidSettings(format!(
            "reduced step size {dt} must be positive"
        )));
    }
    let n_ops = sys.num_ops();
    let mut targets = Array1::zeros(n_ops);
    let mut rates = Array1::zeros(n_ops);
    let mut d = 0;
    for (o, op) in sys.ops().iter().enumerate() {
        let base = g.expectation(op)?;
        if sys.conserved()[o] {
            targets[o] = base;
        } else {
            let split = &dec.components()[d];
            let gen = coarse_grained_generator(&split.orthogonal, sys.eigensystem(), tau)?;
            let rate = g.expectation(&gen)?;
            rates[o] = rate;
            targets[o] = base + dt * rate;
            d += 1;
        }
    }
    projector.set_warm_start(zeta.to_vec())?;
    let state = projector.invert(&targets.to_vec())?;
    Ok(ReducedStep {
        zeta: Array1::from(state.params().zeta.clone()),
        targets,
        rates,
        state,
    })
}

/// Runs the reduced dynamics over `steps` uniform steps of size `dt`,
/// recomputing the orthogonal decomposition at every step (the Kubo form
/// moves with the state). Velocity rows come from second-order finite
/// differences of the multiplier path.
pub fn reduced_trajectory(
    sys: &MacrostateSystem,
    zeta0: &[f64],
    t0: f64,
    tau: f64,
    dt: f64,
    steps: usize,
    settings: InversionSettings,
) -> Result<Trajectory> {
    if steps == 0 {
        return Err(Error::InvalidSettings(
            "reduced trajectory needs at least one step".into(),
        ));
    }
    if zeta0.len() != sys.num_ops() {
        return Err(Error::DimensionMismatch {
            left: zeta0.len(),
            right: sys.num_ops(),
            context: "initial multipliers vs constraint operators".into(),
        });
    }
    let n_ops = sys.num_ops();
    let times: Vec<f64> = (0..=steps).map(|k| t0 + dt * k as f64).collect();
    let mut zeta = Array2::zeros((steps + 1, n_ops));
    let mut expectations = Array2::zeros((steps + 1, n_ops));
    let mut entropy = vec![0.0; steps + 1];

    let mut current = zeta0.to_vec();
    zeta.row_mut(0).assign(&Array1::from(current.clone()));
    let mut g = sys.gibbs(&current)?;
    record_node(sys, &g, 0, &mut expectations, &mut entropy)?;
    let mut projector = sys.projector(settings)?;

    for k in 0..steps {
        let dec = decompose_system(sys, &g)?;
        let step = reduced_step_at(sys, &g, &current, &dec, tau, dt, &mut projector)?;
        current = step.zeta.to_vec();
        zeta.row_mut(k + 1).assign(&step.zeta);
        g = step.state;
        record_node(sys, &g, k + 1, &mut expectations, &mut entropy)?;
    }

    let zeta_dot = finite_difference_rows(&zeta, dt);
    Ok(Trajectory {
        times,
        zeta,
        zeta_dot,
        expectations,
        entropy,
        labels: sys.labels().to_vec(),
    })
}

/// Generator expectations over a grid of coarse-graining times, with a
/// plateau search. A missing plateau is a legitimate outcome — it means the
/// difference quotient never became insensitive to `tau` — and is reported
/// as `plateau: None` rather than an error.
#[derive(Debug, Clone)]
pub struct TauIndependence {
    pub tau_grid: Vec<f64>,
    /// `Tr[(L'_tau a) w]` per grid entry.
    pub values: Vec<f64>,
    /// Spread of the values over the whole grid, relative to their mean
    /// magnitude (floored to keep stationary states finite).
    pub relative_spread: f64,
    /// Index window `(first, last)` of the widest contiguous run whose
    /// relative spread stays below the threshold; needs at least two grid
    /// points.
    pub plateau: Option<(usize, usize)>,
    /// Threshold the plateau search used.
    pub plateau_threshold: f64,
}

fn relative_spread(values: &[f64]) -> f64 {
    let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
        sum += v;
    }
    let scale = (sum / values.len() as f64).abs().max(SPREAD_FLOOR);
    (hi - lo) / scale
}

/// Tabulates `Tr[(L'_tau a) w]` over `tau_grid` and searches for the widest
/// window in which the value is `tau`-independent up to
/// `plateau_threshold` (relative).
pub fn tau_independence_diagnostic(
    a: &HermitianOperator,
    h_eig: &EigenSystem,
    g: &GibbsState,
    tau_grid: &[f64],
    plateau_threshold: f64,
) -> Result<TauIndependence> {
    if tau_grid.is_empty() {
        return Err(Error::InvalidSettings("empty tau grid".into()));
    }
    if !tau_grid.windows(2).all(|w| w[0] < w[1]) || tau_grid[0] <= 0.0 {
        return Err(Error::InvalidSettings(
            "tau grid must be positive and strictly increasing".into(),
        ));
    }
    if !(plateau_threshold > 0.0) {
        return Err(Error::InvalidSettings(
            "plateau threshold must be positive".into(),
        ));
    }
    let mut values = Vec::with_capacity(tau_grid.len());
    for &tau in tau_grid {
        let gen = coarse_grained_generator(a, h_eig, tau)?;
        values.push(g.expectation(&gen)?);
    }
    let mut plateau = None;
    let mut best = 1usize;
    for i in 0..values.len() {
        for j in (i + 1)..values.len() {
            if relative_spread(&values[i..=j]) <= plateau_threshold {
                if j - i >= best {
                    best = j - i;
                    plateau = Some((i, j));
                }
            } else {
                break;
            }
        }
    }
    Ok(TauIndependence {
        tau_grid: tau_grid.to_vec(),
        relative_spread: relative_spread(&values),
        values,
        plateau,
        plateau_threshold,
    })
}
