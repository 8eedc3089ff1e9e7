//! Macrostate trajectories: the exact oracle and the closed evolution
//! equations with memory.
//!
//! Two routes produce a multiplier path `zeta(t)` over the mode constraint
//! set:
//!
//! * [`exact_macrostate_trajectory`] evolves the density operator unitarily
//!   and projects it back onto the exponential family at every grid time —
//!   the ground truth.
//! * [`integrate_zeta`] advances the first-order closed equations: the Kubo
//!   covariance times `zeta_dot` balances a drift term plus a history
//!   integral over the memory kernel [`memory_kernel_term`], optionally
//!   truncated to a window of length `tau`.
//!
//! The module also estimates the correlation decay time `tau` from Kubo
//! autocorrelations ([`estimate_tau`]) and summarizes the stepwise entropy
//! inequality along a trajectory ([`entropy_report`]).

use ndarray::prelude::*;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::gibbs::{gibbs_state, GibbsState};
use crate::linsolve::solve_covariance;
use crate::maxent::{InversionSettings, MacrostateProjector};
use crate::model::Model;
use crate::modes::{mode_transform, ModeBasis};
use crate::operator::{
    i_commutator, trace_product, CMatrix, DensityOperator, EigenSystem, HermitianOperator,
};
use crate::preparation::{history_integral_eig, PreparationSchedule};
use crate::tolerances as tol;

/// Ridge used when a Kubo covariance needs regularizing.
const SOLVER_RIDGE: f64 = 1e-12;

/// Knobs for the memory-kernel dynamics.
#[derive(Debug, Clone)]
pub struct MemorySettings {
    /// Memory depth: correlation decay time of the kernel.
    pub tau: f64,
    /// Replace the full history `[t_start, t]` by `[t - tau, t]` and drop
    /// the start-point boundary term.
    pub truncate_history: bool,
    /// Integrator step.
    pub dt: f64,
    /// Cumulant order of the closure; only 1 is implemented.
    pub order: u32,
}

impl Default for MemorySettings {
    fn default() -> Self {
        Self {
            tau: 1.0,
            truncate_history: true,
            dt: 1e-2,
            order: 1,
        }
    }
}

impl MemorySettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidSettings("dt must be positive".into()));
        }
        if !(self.tau >= self.dt && self.tau.is_finite()) {
            return Err(Error::InvalidSettings(
                "tau must be finite and at least dt".into(),
            ));
        }
        if self.order != 1 {
            return Err(Error::InvalidSettings(
                "only the first-order cumulant closure is implemented".into(),
            ));
        }
        Ok(())
    }
}

/// A multiplier path over a uniform time grid, with everything recorded
/// along the way.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Row `k`: multipliers at `times[k]`.
    pub zeta: Array2<f64>,
    /// Row `k`: multiplier velocities at `times[k]`.
    pub zeta_dot: Array2<f64>,
    /// Row `k`: expectations of the constraint operators at `times[k]`.
    pub expectations: Array2<f64>,
    /// Macrostate entropy at each grid time.
    pub entropy: Vec<f64>,
    /// Constraint-operator labels matching the columns.
    pub labels: Vec<String>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Grid step (the grid is uniform by construction).
    pub fn dt(&self) -> f64 {
        if self.times.len() < 2 {
            0.0
        } else {
            self.times[1] - self.times[0]
        }
    }

    /// Index of the grid node at `t`, within a small fraction of the step.
    pub fn index_at(&self, t: f64) -> Result<usize> {
        let dt = self.dt();
        let snap = (dt * tol::GRID_SNAP_REL).max(1e-12);
        match self.times.iter().position(|&node| (node - t).abs() <= snap) {
            Some(i) => Ok(i),
            None => Err(Error::Grid(format!("time {t} is not a trajectory node"))),
        }
    }

    /// View usable by the exponent-rewriting residual check.
    pub fn zeta_trajectory(&self) -> crate::preparation::ZetaTrajectory {
        crate::preparation::ZetaTrajectory {
            times: self.times.clone(),
            zeta: self.zeta.clone(),
            zeta_dot: self.zeta_dot.clone(),
        }
    }

    fn validate_rows(&self) -> Result<()> {
        let n = self.times.len();
        if n < 2 {
            return Err(Error::Grid("trajectory needs at least two samples".into()));
        }
        if self.zeta.nrows() != n || self.zeta_dot.nrows() != n {
            return Err(Error::Grid("trajectory row count mismatch".into()));
        }
        Ok(())
    }
}

/// A model together with its mode constraint set and the cached spectral
/// data every evolution routine needs.
#[derive(Debug, Clone)]
pub struct MacrostateSystem {
    hamiltonian: HermitianOperator,
    h_eig: EigenSystem,
    model: Model,
    basis: ModeBasis,
    /// Constraint operators: density modes then conserved extras.
    ops: Vec<HermitianOperator>,
    ops_eig: Vec<CMatrix>,
    /// `i[H, op]` for each constraint operator (zero for conserved ones).
    dot_ops: Vec<HermitianOperator>,
    dot_ops_eig: Vec<CMatrix>,
    labels: Vec<String>,
    conserved: Vec<bool>,
    n_modes: usize,
}

impl MacrostateSystem {
    /// Builds the constraint set from a model and a mode cutoff: density
    /// modes up to wavenumber `n_max`, then the model's conserved extras.
    pub fn new(model: &Model, n_max: usize) -> Result<Self> {
        let obs = &model.observables;
        let basis = ModeBasis::fourier(obs.observables().len(), n_max)?;
        let modes = mode_transform(obs, &basis)?;
        let n_modes = modes.ops.len();
        let mut ops = modes.ops;
        let mut labels = modes.labels;
        let n_sites = obs.observables().len();
        let macro_ops = obs.macrostate_ops();
        let macro_labels = obs.macrostate_labels();
        for (op, label) in macro_ops[n_sites..]
            .iter()
            .zip(macro_labels[n_sites..].iter())
        {
            ops.push(op.clone());
            labels.push(label.clone());
        }
        let h = &model.hamiltonian;
        let h_eig = h.eigh()?;
        let h_scale = 1.0 + h.frobenius_norm();
        let mut ops_eig = Vec::with_capacity(ops.len());
        let mut dot_ops = Vec::with_capacity(ops.len());
        let mut dot_ops_eig = Vec::with_capacity(ops.len());
        let mut conserved = Vec::with_capacity(ops.len());
        for op in &ops {
            let dot = i_commutator(h, op)?;
            let is_conserved =
                dot.frobenius_norm() <= tol::COMMUTATION_REL * h_scale * (1.0 + op.frobenius_norm());
            ops_eig.push(h_eig.to_eigenbasis(op.matrix()));
            dot_ops_eig.push(h_eig.to_eigenbasis(dot.matrix()));
            dot_ops.push(dot);
            conserved.push(is_conserved);
        }
        Ok(Self {
            hamiltonian: h.clone(),
            h_eig,
            model: model.clone(),
            basis,
            ops,
            ops_eig,
            dot_ops,
            dot_ops_eig,
            labels,
            conserved,
            n_modes,
        })
    }

    pub fn hamiltonian(&self) -> &HermitianOperator {
        &self.hamiltonian
    }

    pub fn eigensystem(&self) -> &EigenSystem {
        &self.h_eig
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn basis(&self) -> &ModeBasis {
        &self.basis
    }

    /// The constraint operators (density modes, then conserved extras).
    pub fn ops(&self) -> &[HermitianOperator] {
        &self.ops
    }

    /// `i[H, op]` for each constraint operator.
    pub fn dot_ops(&self) -> &[HermitianOperator] {
        &self.dot_ops
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Which constraint operators commute with the Hamiltonian.
    pub fn conserved(&self) -> &[bool] {
        &self.conserved
    }

    /// Number of density-mode operators (the leading block of `ops`).
    pub fn num_modes(&self) -> usize {
        self.n_modes
    }

    pub fn num_ops(&self) -> usize {
        self.ops.len()
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    /// Exponential macrostate for multipliers over this constraint set.
    pub fn gibbs(&self, zeta: &[f64]) -> Result<GibbsState> {
        gibbs_state(&self.ops, zeta)
    }

    /// Inverse problem (targets -> multipliers) over this constraint set.
    pub fn projector(&self, settings: InversionSettings) -> Result<MacrostateProjector> {
        MacrostateProjector::new(self.ops.clone(), settings)
    }

    /// A schedule with no finite-time history, starting the dynamics at `t0`.
    pub fn empty_schedule(&self, t0: f64) -> PreparationSchedule {
        PreparationSchedule::gibbs_only(
            t0,
            vec![0.0; self.model.observables.macrostate_ops().len()],
        )
    }
}

/// Evolves `rho0` exactly from `times[0] = t0` and projects the evolved
/// state back onto the exponential family at every node. Velocities are
/// filled by central finite differences after the sweep.
pub fn exact_macrostate_trajectory(
    sys: &MacrostateSystem,
    rho0: &DensityOperator,
    t0: f64,
    dt: f64,
    steps: usize,
    settings: InversionSettings,
) -> Result<Trajectory> {
    if !(dt > 0.0 && dt.is_finite()) || steps == 0 {
        return Err(Error::Grid("need a positive step and at least one step".into()));
    }
    if rho0.dim() != sys.dim() {
        return Err(Error::DimensionMismatch {
            left: rho0.dim(),
            right: sys.dim(),
            context: "exact_macrostate_trajectory".into(),
        });
    }
    let n_ops = sys.num_ops();
    let mut projector = sys.projector(settings)?;
    let times: Vec<f64> = (0..=steps).map(|k| t0 + dt * k as f64).collect();
    let mut zeta = Array2::zeros((steps + 1, n_ops));
    let mut expectations = Array2::zeros((steps + 1, n_ops));
    let mut entropy = vec![0.0; steps + 1];

    for k in 0..=steps {
        let rho_t = sys.h_eig.evolve_state(rho0, dt * k as f64);
        let g = projector.project(&rho_t).map_err(|e| {
            Error::NumericalBreakdown(format!(
                "projection failed at t = {}: {e}",
                times[k]
            ))
        })?;
        for (j, op) in sys.ops.iter().enumerate() {
            expectations[[k, j]] = crate::operator::expectation(op, &rho_t);
        }
        zeta.row_mut(k).assign(&Array1::from(g.params().zeta.clone()));
        entropy[k] = g.entropy();
        projector.set_warm_start(g.params().zeta.clone())?;
    }

    // Constants of motion must not drift along the exact evolution.
    for (j, &is_c) in sys.conserved.iter().enumerate() {
        if !is_c {
            continue;
        }
        let first = expectations[[0, j]];
        for k in 0..=steps {
            let drift = (expectations[[k, j]] - first).abs();
            if drift > tol::CONSERVED_DRIFT_ABS {
                return Err(Error::NumericalBreakdown(format!(
                    "conserved expectation '{}' drifted by {drift:.3e}",
                    sys.labels[j]
                )));
            }
        }
    }

    let zeta_dot = finite_difference_rows(&zeta, dt);
    Ok(Trajectory {
        times,
        zeta,
        zeta_dot,
        expectations,
        entropy,
        labels: sys.labels.clone(),
    })
}

/// Second-order finite differences of each column over a uniform grid.
pub(crate) fn finite_difference_rows(rows: &Array2<f64>, dt: f64) -> Array2<f64> {
    let n = rows.nrows();
    let mut out = Array2::zeros(rows.raw_dim());
    if n < 2 {
        return out;
    }
    for j in 0..rows.ncols() {
        for k in 0..n {
            out[[k, j]] = if k == 0 {
                (-3.0 * rows[[0, j]] + 4.0 * rows[[1, j]] - rows[[2.min(n - 1), j]])
                    / (2.0 * dt)
            } else if k == n - 1 {
                (3.0 * rows[[k, j]] - 4.0 * rows[[k - 1, j]]
                    + rows[[k.saturating_sub(2), j]])
                    / (2.0 * dt)
            } else {
                (rows[[k + 1, j]] - rows[[k - 1, j]]) / (2.0 * dt)
            };
        }
    }
    if n == 2 {
        // Not enough points for second order; fall back to the secant.
        for j in 0..rows.ncols() {
            let slope = (rows[[1, j]] - rows[[0, j]]) / dt;
            out[[0, j]] = slope;
            out[[1, j]] = slope;
        }
    }
    out
}

/// The memory kernel operator at history time `t_prime`, for current time
/// `t`.
///
/// Before the dynamics started (`t_prime < t0`) the kernel collects the
/// preparation history terms, weighted by their test functions; afterwards
/// it collects `zeta_dot . op + zeta . d(op)/dt`, all operators lagged by
/// `-(t - t_prime)`.
pub fn memory_kernel_term(
    sys: &MacrostateSystem,
    sched: &PreparationSchedule,
    traj: &Trajectory,
    t: f64,
    t_prime: f64,
) -> Result<HermitianOperator> {
    sched.validate(&sys.model.observables)?;
    if t_prime < sched.t_start - 1e-12 || t_prime > t + 1e-12 {
        return Err(Error::Grid(format!(
            "history time {t_prime} outside [{}, {t}]",
            sched.t_start
        )));
    }
    let dim = sys.dim();
    let obs = &sys.model.observables;
    if t_prime < sched.t0 {
        let mut acc = CMatrix::zeros((dim, dim));
        let lag = t_prime - t;
        for term in &sched.density_terms {
            let w = term.coefficient * term.function.eval(t_prime);
            if w == 0.0 {
                continue;
            }
            let lagged = sys.h_eig.heisenberg(&obs.observables()[term.operator_index], lag);
            acc = acc + lagged.matrix().mapv(|z| z * C64::new(w, 0.0));
        }
        for term in &sched.current_terms {
            let w = term.coefficient * term.function.eval(t_prime);
            if w == 0.0 {
                continue;
            }
            let lagged = sys.h_eig.heisenberg(&obs.currents()[term.operator_index], lag);
            acc = acc + lagged.matrix().mapv(|z| z * C64::new(w, 0.0));
        }
        HermitianOperator::new(acc)
    } else {
        let k = traj.index_at(t_prime)?;
        let lag = t_prime - t;
        let mut acc = CMatrix::zeros((dim, dim));
        for (o, (op_eig, dot_eig)) in sys.ops_eig.iter().zip(&sys.dot_ops_eig).enumerate() {
            let zd = traj.zeta_dot[[k, o]];
            if zd != 0.0 {
                let lagged = sys.h_eig.phase_evolve_in_basis(op_eig, lag);
                acc = acc + lagged.mapv(|z| z * C64::new(zd, 0.0));
            }
            let z = traj.zeta[[k, o]];
            if z != 0.0 {
                let lagged = sys.h_eig.phase_evolve_in_basis(dot_eig, lag);
                acc = acc + lagged.mapv(|z_| z_ * C64::new(z, 0.0));
            }
        }
        HermitianOperator::new(sys.h_eig.from_eigenbasis(&acc))
    }
}

/// Quadrature weights for `count + 1` uniformly spaced nodes spanning
/// `count * h`: composite Simpson when the interval count is even, Simpson
/// with a 3/8 tail when it is odd, a plain trapezoid when only two nodes
/// exist, and a single zero weight for a degenerate one-node "interval".
pub(crate) fn history_weights(count: usize, h: f64) -> Vec<f64> {
    match count {
        0 => vec![0.0],
        1 => vec![0.5 * h, 0.5 * h],
        _ => {
            let mut w = vec![0.0; count + 1];
            let simpson_end = if count % 2 == 0 { count } else { count - 3 };
            if simpson_end > 0 {
                w[0] += h / 3.0;
                w[simpson_end] += h / 3.0;
                for (m, wm) in w.iter_mut().enumerate().take(simpson_end).skip(1) {
                    *wm += if m % 2 == 1 { 4.0 * h / 3.0 } else { 2.0 * h / 3.0 };
                }
            }
            if count % 2 == 1 {
                let base = count - 3;
                for (i, c) in [3.0, 9.0, 9.0, 3.0].iter().enumerate() {
                    w[base + i] += c * h / 8.0;
                }
            }
            w
        }
    }
}

/// `zeta_dot . op + zeta . d(op)/dt` at one history node, lagged by `lag`
/// and scaled by `scale`, in the Hamiltonian eigenbasis. Conserved rows
/// contribute only through their velocity term; their operator derivative
/// vanishes and would only add numerical noise.
fn live_kernel_eig(
    sys: &MacrostateSystem,
    zeta_row: ArrayView1<f64>,
    zeta_dot_row: ArrayView1<f64>,
    lag: f64,
    scale: f64,
) -> CMatrix {
    let dim = sys.dim();
    let mut acc = CMatrix::zeros((dim, dim));
    for (o, (op_eig, dot_eig)) in sys.ops_eig.iter().zip(&sys.dot_ops_eig).enumerate() {
        let zd = scale * zeta_dot_row[o];
        if zd != 0.0 {
            let lagged = sys.h_eig.phase_evolve_in_basis(op_eig, lag);
            acc = acc + lagged.mapv(|z| z * C64::new(zd, 0.0));
        }
        let z = scale * zeta_row[o];
        if z != 0.0 && !sys.conserved[o] {
            let lagged = sys.h_eig.phase_evolve_in_basis(dot_eig, lag);
            acc = acc + lagged.mapv(|z_| z_ * C64::new(z, 0.0));
        }
    }
    acc
}

/// History terms that stay fixed while one integration step is resolved,
/// accumulated in the Hamiltonian eigenbasis with lags relative to
/// `t_node`: the preparation branch, the dynamics branch over all grid
/// nodes *before* `t_node`, and — with the full history — the start-point
/// boundary term. The node's own kernel sample is deliberately left out so
/// stages can re-evaluate it with a current velocity estimate; its
/// quadrature weight is reported as `endpoint_weight`.
///
/// Because every term is a fixed matrix dressed with phases
/// `exp(i (E_m - E_n) (t' - t_node))`, re-referencing the whole sum to a
/// stage time `s` is exact: multiply by the phases for `t_node - s`.
struct StoredMemory {
    eig: CMatrix,
    endpoint_weight: f64,
    t_node: f64,
}

fn stored_memory(
    sys: &MacrostateSystem,
    sched: &PreparationSchedule,
    times: &[f64],
    zeta: &Array2<f64>,
    zeta_dot: &Array2<f64>,
    node: usize,
    mem: &MemorySettings,
) -> StoredMemory {
    let t = times[node];
    // With truncation the window is frozen at the node for all of the
    // step's stages; the O(dt) wiggle sits at the far end of the window
    // where the kernel is already down by the truncation's own modeling
    // error.
    let window = if mem.truncate_history {
        Some(t - mem.tau)
    } else {
        None
    };
    let mut acc = history_integral_eig(sched, &sys.model.observables, &sys.h_eig, t, window);

    let h = if times.len() > 1 { times[1] - times[0] } else { 1.0 };
    let snap = (h * tol::GRID_SNAP_REL).max(1e-12);
    let start = match window {
        Some(w) => times[..=node]
            .iter()
            .position(|&tm| tm >= w - snap)
            .unwrap_or(node),
        None => 0,
    };
    let weights = history_weights(node - start, h);
    for m in start..node {
        let w = weights[m - start];
        if w == 0.0 {
            continue;
        }
        acc = acc + live_kernel_eig(sys, zeta.row(m), zeta_dot.row(m), times[m] - t, w);
    }

    // Start-point boundary term, kept only with the full history.
    if !mem.truncate_history && sched.gamma_start.iter().any(|g| *g != 0.0) {
        let macro_ops = sys.model.observables.macrostate_ops();
        let lag = sched.t_start - t;
        for (op, &g) in macro_ops.iter().zip(&sched.gamma_start) {
            if g == 0.0 {
                continue;
            }
            let op_eig = sys.h_eig.to_eigenbasis(op.matrix());
            let lagged = sys.h_eig.phase_evolve_in_basis(&op_eig, lag);
            acc = acc - lagged.mapv(|z| z * C64::new(g, 0.0));
        }
    }
    StoredMemory {
        eig: acc,
        endpoint_weight: *weights.last().expect("weights are never empty"),
        t_node: t,
    }
}

/// One balance solve at a stage state: Kubo covariance times `-zeta_dot`
/// equals drift plus memory, with conserved rows undriven.
///
/// The history operator is the stored part phase-shifted to the stage time
/// `s`, plus the node's own kernel sample, plus — when `s` sits past the
/// node — a trapezoid over the sliver `[t_node, s]` whose far sample uses
/// the current velocity estimate. With `node_state` set, the node sample is
/// held at those values; without it (the solve *at* the node) the estimate
/// feeds the node sample itself, and `iterations > 1` makes that sample
/// self-consistent by resolving with the freshly solved velocity.
fn stage_rate(
    sys: &MacrostateSystem,
    stored: &StoredMemory,
    s: f64,
    zeta_stage: &Array1<f64>,
    node_state: Option<(ArrayView1<f64>, ArrayView1<f64>)>,
    est0: &Array1<f64>,
    iterations: usize,
) -> Result<Array1<f64>> {
    let g = sys.gibbs(&zeta_stage.to_vec())?;
    let k_cov = g.kubo_covariance(&sys.ops)?;
    let n_ops = sys.num_ops();
    let mut duals: Vec<Option<CMatrix>> = Vec::with_capacity(n_ops);
    let mut drift = Array1::zeros(n_ops);
    for (o, dot) in sys.dot_ops.iter().enumerate() {
        if sys.conserved[o] {
            duals.push(None);
        } else {
            duals.push(Some(g.kubo_dual(dot)?));
            drift[o] = g.expectation(dot)?;
        }
    }
    let sliver = s - stored.t_node;
    let shifted = sys.h_eig.phase_evolve_in_basis(&stored.eig, stored.t_node - s);
    let stored_comp = sys.h_eig.from_eigenbasis(&shifted);

    let mut est = est0.clone();
    let mut rate = est0.clone();
    for _ in 0..iterations.max(1) {
        let live = match node_state {
            Some((zn, zdn)) => {
                let mut l = live_kernel_eig(
                    sys,
                    zn,
                    zdn,
                    stored.t_node - s,
                    stored.endpoint_weight + 0.5 * sliver,
                );
                if sliver > 0.0 {
                    l = l + live_kernel_eig(sys, zeta_stage.view(), est.view(), 0.0, 0.5 * sliver);
                }
                l
            }
            None => live_kernel_eig(
                sys,
                zeta_stage.view(),
                est.view(),
                0.0,
                stored.endpoint_weight + 0.5 * sliver,
            ),
        };
        let total = &stored_comp + &sys.h_eig.from_eigenbasis(&live);
        let mut rhs = Array1::zeros(n_ops);
        for (o, dual) in duals.iter().enumerate() {
            if let Some(y) = dual {
                rhs[o] = -(drift[o] + trace_product(y, &total));
            }
        }
        let sol = solve_covariance(&k_cov, &rhs, SOLVER_RIDGE)?;
        log::debug!(
            "rate solve at t = {s}: covariance condition {:.3e}{}",
            sol.condition,
            if sol.regularized { " (regularized)" } else { "" }
        );
        rate = sol.x;
        est = rate.clone();
    }
    Ok(rate)
}

/// Multiplier velocity at a node of a completed trajectory, from the closed
/// evolution equations. The history integral — including the node's own
/// kernel sample — uses the recorded multipliers and velocities as-is.
pub fn zeta_dot_solve(
    sys: &MacrostateSystem,
    sched: &PreparationSchedule,
    traj: &Trajectory,
    t: f64,
    mem: &MemorySettings,
) -> Result<Array1<f64>> {
    mem.validate()?;
    sched.validate(&sys.model.observables)?;
    traj.validate_rows()?;
    let node = traj.index_at(t)?;
    let stored = stored_memory(sys, sched, &traj.times, &traj.zeta, &traj.zeta_dot, node, mem);
    let zk = traj.zeta.row(node).to_owned();
    let zdk = traj.zeta_dot.row(node).to_owned();
    stage_rate(
        sys,
        &stored,
        traj.times[node],
        &zk,
        Some((traj.zeta.row(node), traj.zeta_dot.row(node))),
        &zdk,
        1,
    )
}

/// Integrates the closed evolution equations from `sched.t0` to `t_end`
/// with fixed-step RK4. Each step accumulates the history up to its start
/// node once, then every stage re-references that sum to its own time by an
/// exact phase shift and closes the remaining sliver with a trapezoid whose
/// far sample iterates once on the freshly solved velocity — so the stage
/// derivatives, and with them the step, stay third-order accurate even when
/// the motion is driven entirely by the memory integral.
pub fn integrate_zeta(
    sys: &MacrostateSystem,
    zeta0: &[f64],
    sched: &PreparationSchedule,
    mem: &MemorySettings,
    t_end: f64,
) -> Result<Trajectory> {
    mem.validate()?;
    sched.validate(&sys.model.observables)?;
    if zeta0.len() != sys.num_ops() {
        return Err(Error::DimensionMismatch {
            left: zeta0.len(),
            right: sys.num_ops(),
            context: "initial multipliers vs constraint operators".into(),
        });
    }
    let t0 = sched.t0;
    let span = t_end - t0;
    if !(span > 0.0) {
        return Err(Error::Grid(format!("t_end {t_end} must exceed t0 {t0}")));
    }
    let steps = (span / mem.dt).round() as usize;
    if steps == 0 || (steps as f64 * mem.dt - span).abs() > tol::GRID_SNAP_REL * span.max(1.0) {
        return Err(Error::Grid(format!(
            "t_end - t0 = {span} is not a whole number of dt = {} steps",
            mem.dt
        )));
    }
    let n_ops = sys.num_ops();
    let times: Vec<f64> = (0..=steps).map(|k| t0 + mem.dt * k as f64).collect();
    let mut zeta = Array2::zeros((steps + 1, n_ops));
    let mut zeta_dot = Array2::zeros((steps + 1, n_ops));
    let mut expectations = Array2::zeros((steps + 1, n_ops));
    let mut entropy = vec![0.0; steps + 1];

    zeta.row_mut(0).assign(&Array1::from(zeta0.to_vec()));
    let g0 = sys.gibbs(zeta0)?;
    record_node(sys, &g0, 0, &mut expectations, &mut entropy)?;

    for k in 0..=steps {
        let stored = stored_memory(sys, sched, &times, &zeta, &zeta_dot, k, mem);
        let zk = zeta.row(k).to_owned();
        let t_k = times[k];

        // Node velocity: the previous node's value seeds a self-consistent
        // double solve at the node itself.
        let est0 = if k > 0 {
            zeta_dot.row(k - 1).to_owned()
        } else {
            Array1::zeros(n_ops)
        };
        let k1 = stage_rate(sys, &stored, t_k, &zk, None, &est0, 2)?;
        zeta_dot.row_mut(k).assign(&k1);
        let speed = k1.iter().map(|v| v * v).sum::<f64>().sqrt();
        if speed * mem.dt > tol::STEP_NORM_CAP {
            return Err(Error::StepRejected {
                t: times[k],
                size: speed * mem.dt,
            });
        }
        if k == steps {
            break;
        }

        let half = 0.5 * mem.dt;
        let node_state = Some((zk.view(), k1.view()));
        let z2 = &zk + &(&k1 * half);
        let k2 = stage_rate(sys, &stored, t_k + half, &z2, node_state, &k1, 2)?;
        let z3 = &zk + &(&k2 * half);
        let k3 = stage_rate(sys, &stored, t_k + half, &z3, node_state, &k2, 2)?;
        let z4 = &zk + &(&k3 * mem.dt);
        let k4 = stage_rate(sys, &stored, t_k + mem.dt, &z4, node_state, &k3, 2)?;

        let next = &zk + &((&k1 + &(&k2 * 2.0) + &(&k3 * 2.0) + &k4) * (mem.dt / 6.0));
        zeta.row_mut(k + 1).assign(&next);
        let g = sys.gibbs(&next.to_vec())?;
        record_node(sys, &g, k + 1, &mut expectations, &mut entropy)?;
    }

    Ok(Trajectory {
        times,
        zeta,
        zeta_dot,
        expectations,
        entropy,
        labels: sys.labels.clone(),
    })
}

pub(crate) fn record_node(
    sys: &MacrostateSystem,
    g: &GibbsState,
    k: usize,
    expectations: &mut Array2<f64>,
    entropy: &mut [f64],
) -> Result<()> {
    for (j, op) in sys.ops.iter().enumerate() {
        expectations[[k, j]] = g.expectation(op)?;
    }
    entropy[k] = g.entropy();
    Ok(())
}

/// Stepwise entropy summary of a trajectory.
#[derive(Debug, Clone)]
pub struct EntropyReport {
    /// Requested comparison lag.
    pub tau: f64,
    /// Lag in grid steps actually used.
    pub stride: usize,
    /// Lag actually used (`stride * dt`).
    pub effective_tau: f64,
    /// Times `t` with a step value `S(t) - S(t - tau)`.
    pub step_times: Vec<f64>,
    pub entropy_steps: Vec<f64>,
    /// Steps more negative than the drift tolerance.
    pub negative_steps: usize,
    pub min_step: f64,
    /// The distinguished first step `S(t_0 + tau) - S(t_0)`: for a
    /// trajectory projected from one exact evolution of a Gibbs initial
    /// state this one — unlike the later steps — cannot be negative.
    pub first_step: f64,
    /// Entropy of the conserved-totals-only equilibrium at the trajectory's
    /// conserved values.
    pub equilibrium_entropy: f64,
    /// `S_eq - S(t)` per grid time (non-negative up to tolerance).
    pub equilibrium_gaps: Vec<f64>,
    pub min_equilibrium_gap: f64,
}

/// Compares entropies a lag `tau` apart along the trajectory and reports
/// the gap to the conserved-only equilibrium.
///
/// Each trajectory entropy is the macrostate entropy of the recorded
/// multipliers. Whether successive steps may decrease depends on how the
/// trajectory was produced: projections of one exact evolution satisfy the
/// single-step inequality against the initial state, while the chained
/// inequality needs the re-constrained closure; the report only tabulates.
pub fn entropy_report(
    sys: &MacrostateSystem,
    traj: &Trajectory,
    tau: f64,
) -> Result<EntropyReport> {
    traj.validate_rows()?;
    let dt = traj.dt();
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidSettings("tau must be positive".into()));
    }
    let span = traj.times[traj.times.len() - 1] - traj.times[0];
    if span + 1e-12 < 2.0 * tau {
        return Err(Error::Grid(format!(
            "trajectory span {span} is shorter than 2 tau = {}",
            2.0 * tau
        )));
    }
    let stride = ((tau / dt).round() as usize).max(1);
    let effective_tau = stride as f64 * dt;
    let mut step_times = vec![];
    let mut entropy_steps = vec![];
    let mut negative = 0;
    let mut min_step = f64::INFINITY;
    for k in stride..traj.len() {
        let step = traj.entropy[k] - traj.entropy[k - stride];
        step_times.push(traj.times[k]);
        if step < -tol::ENTROPY_SLACK {
            negative += 1;
        }
        min_step = min_step.min(step);
        entropy_steps.push(step);
    }

    // Equilibrium: maximum entropy holding only the conserved totals.
    let conserved_ops: Vec<HermitianOperator> = sys
        .ops
        .iter()
        .zip(&sys.conserved)
        .filter(|(_, &c)| c)
        .map(|(op, _)| op.clone())
        .collect();
    let targets: Vec<f64> = (0..sys.num_ops())
        .filter(|&j| sys.conserved[j])
        .map(|j| traj.expectations[[0, j]])
        .collect();
    let mut projector = MacrostateProjector::new(conserved_ops, InversionSettings::default())?;
    let eq = projector.invert(&targets)?;
    let equilibrium_entropy = eq.entropy();
    let equilibrium_gaps: Vec<f64> = traj
        .entropy
        .iter()
        .map(|s| equilibrium_entropy - s)
        .collect();
    let min_equilibrium_gap = equilibrium_gaps.iter().cloned().fold(f64::INFINITY, f64::min);

    let first_step = entropy_steps.first().copied().unwrap_or(0.0);
    Ok(EntropyReport {
        tau,
        stride,
        effective_tau,
        step_times,
        entropy_steps,
        negative_steps: negative,
        min_step,
        first_step,
        equilibrium_entropy,
        equilibrium_gaps,
        min_equilibrium_gap,
    })
}

/// Autocorrelation diagnostics for one driven mode.
#[derive(Debug, Clone)]
pub struct TauModeReport {
    pub label: String,
    /// First lag where the normalized autocorrelation falls below `1/e`.
    pub crossing: Option<f64>,
    /// First lag after the crossing where it climbs back above 0.9.
    pub recurrence: Option<f64>,
}

/// Result of the correlation-time estimate.
#[derive(Debug, Clone)]
pub struct TauEstimate {
    pub per_mode: Vec<TauModeReport>,
    /// Slowest `1/e` crossing over the driven modes (present only when all
    /// of them crossed within the scanned window).
    pub tau_est: Option<f64>,
    /// Earliest recurrence over the driven modes.
    pub recurrence: Option<f64>,
    /// True when a crossing exists and no recurrence undercuts it.
    pub certified: bool,
}

impl TauEstimate {
    pub fn no_driven_modes(&self) -> bool {
        self.per_mode.is_empty()
    }
}

/// Scans normalized Kubo autocorrelations of the driven modes at `state`
/// (typically the conserved-totals equilibrium) and reports when they decay
/// below `1/e` and when finite-size recurrences bring them back.
pub fn estimate_tau(
    sys: &MacrostateSystem,
    state: &GibbsState,
    t_max: f64,
    dt: f64,
) -> Result<TauEstimate> {
    if !(dt > 0.0 && t_max >= dt && dt.is_finite() && t_max.is_finite()) {
        return Err(Error::InvalidSettings(
            "need 0 < dt <= t_max for the correlation scan".into(),
        ));
    }
    let conserved_ops: Vec<&HermitianOperator> = sys
        .ops
        .iter()
        .zip(&sys.conserved)
        .filter(|(_, &c)| c)
        .map(|(op, _)| op)
        .collect();
    let n_lags = (t_max / dt).ceil() as usize;
    let mut per_mode = vec![];
    for (o, op) in sys.ops.iter().enumerate() {
        if sys.conserved[o] {
            continue;
        }
        let a_perp = kubo_project_out(state, &conserved_ops, op)?;
        let c0 = state.kubo_inner(&a_perp, &a_perp)?;
        if c0 <= 1e-14 {
            per_mode.push(TauModeReport {
                label: sys.labels[o].clone(),
                crossing: None,
                recurrence: None,
            });
            continue;
        }
        let mut crossing = None;
        let mut recurrence = None;
        for i in 1..=n_lags {
            let lag = dt * i as f64;
            let evolved = sys.h_eig.heisenberg(&a_perp, -lag);
            let c = state.kubo_inner(&a_perp, &evolved)? / c0;
            if crossing.is_none() && c < (-1.0f64).exp() {
                crossing = Some(lag);
            } else if crossing.is_some() && recurrence.is_none() && c > 0.9 {
                recurrence = Some(lag);
                break;
            }
        }
        per_mode.push(TauModeReport {
            label: sys.labels[o].clone(),
            crossing,
            recurrence,
        });
    }
    let all_crossed = !per_mode.is_empty() && per_mode.iter().all(|m| m.crossing.is_some());
    let tau_est = if all_crossed {
        per_mode
            .iter()
            .filter_map(|m| m.crossing)
            .fold(None, |acc: Option<f64>, c| Some(acc.map_or(c, |a| a.max(c))))
    } else {
        None
    };
    let recurrence = per_mode
        .iter()
        .filter_map(|m| m.recurrence)
        .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.min(r))));
    let certified = match (tau_est, recurrence) {
        (Some(t_est), Some(rec)) => t_est < rec,
        (Some(_), None) => true,
        _ => false,
    };
    Ok(TauEstimate {
        per_mode,
        tau_est,
        recurrence,
        certified,
    })
}

/// Removes the Kubo-orthogonal projection of `a` onto the span of the
/// conserved operators at `state`.
fn kubo_project_out(
    state: &GibbsState,
    conserved: &[&HermitianOperator],
    a: &HermitianOperator,
) -> Result<HermitianOperator> {
    if conserved.is_empty() {
        return Ok(a.clone());
    }
    let n = conserved.len();
    let mut gram = Array2::zeros((n, n));
    let mut rhs = Array1::zeros(n);
    for i in 0..n {
        for j in i..n {
            let v = state.kubo_inner(conserved[i], conserved[j])?;
            gram[[i, j]] = v;
            gram[[j, i]] = v;
        }
        rhs[i] = state.kubo_inner(conserved[i], a)?;
    }
    let sol = solve_covariance(&gram, &rhs, SOLVER_RIDGE)?;
    let mut out = a.clone();
    for (i, c) in conserved.iter().enumerate() {
        if sol.x[i] != 0.0 {
            out = &out - &c.scaled(sol.x[i]);
        }
    }
    Ok(out)
}
