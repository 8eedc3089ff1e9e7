//! Turns a resolved configuration into the operator-level objects the
//! pipelines share: the constraint system, the initial density operator,
//! and the initial multipliers on the constraint set.

use crate::config::{InitialCondition, ResolvedConfig};
use macrostate::{
    expectation, prepared_state, project_macrostate, DensityOperator, GibbsState,
    MacrostateSystem, PreparationSchedule,
};

/// Everything the pipelines need, built once and shared immutably.
pub struct Scenario {
    pub sys: MacrostateSystem,
    /// Initial density operator for the exact pipeline.
    pub rho0: DensityOperator,
    /// Initial multipliers on the constraint set for the reduced pipelines.
    pub zeta0: Vec<f64>,
    /// Preparation history for the memory pipeline (empty outside the
    /// `prepared` initial condition).
    pub sched: PreparationSchedule,
    pub t0: f64,
}

/// Builds the scenario; every failure here is a configuration problem
/// (unbuildable model, unreachable multipliers), not a pipeline failure.
pub fn build(cfg: &ResolvedConfig) -> Result<Scenario, String> {
    let spec = cfg.model.to_spec()?;
    let model = macrostate::build_model(&spec).map_err(|e| format!("cannot build model: {e}"))?;
    let sys = MacrostateSystem::new(&model, cfg.mode_cutoff)
        .map_err(|e| format!("cannot build constraint set: {e}"))?;
    let t0 = cfg.t0;

    match &cfg.initial {
        InitialCondition::Gibbs { zeta } => {
            let g = sys
                .gibbs(zeta)
                .map_err(|e| format!("initial.gibbs does not define a state: {e}"))?;
            Ok(Scenario {
                rho0: g.into_state(),
                zeta0: zeta.clone(),
                sched: sys.empty_schedule(t0),
                sys,
                t0,
            })
        }
        InitialCondition::Prepared(p) => {
            let sched = p.to_schedule();
            sched
                .validate(&model.observables)
                .map_err(|e| format!("initial.prepared is not a valid schedule: {e}"))?;
            let rho0 = prepared_state(&sched, &model.observables, &model.hamiltonian)
                .map_err(|e| format!("cannot build the prepared state: {e}"))?;
            let zeta0 = mode_multipliers(&sys, &sched.zeta_t0)?;
            Ok(Scenario {
                rho0,
                zeta0,
                sched,
                sys,
                t0,
            })
        }
        InitialCondition::Quench { zeta, model: qm } => {
            let qspec = qm.to_spec()?;
            let qmodel = macrostate::build_model(&qspec)
                .map_err(|e| format!("cannot build initial.quench.model: {e}"))?;
            let qsys = MacrostateSystem::new(&qmodel, cfg.mode_cutoff)
                .map_err(|e| format!("cannot build the pre-quench constraint set: {e}"))?;
            let rho0 = qsys
                .gibbs(zeta)
                .map_err(|e| format!("initial.quench.zeta does not define a state: {e}"))?
                .into_state();
            let settings = cfg.inversion.to_settings();
            let g = project_macrostate(sys.ops(), &rho0, &settings).map_err(|e| {
                format!("cannot project the quench state onto the post-quench constraints: {e}")
            })?;
            Ok(Scenario {
                rho0,
                zeta0: g.params().zeta.clone(),
                sched: sys.empty_schedule(t0),
                sys,
                t0,
            })
        }
    }
}

/// Converts end-of-preparation multipliers from the per-site basis the
/// schedule uses to the mode basis the dynamics runs in. The conversion is
/// exact only when the kept modes span the site multipliers, so any weight
/// beyond the cutoff is rejected rather than silently dropped.
fn mode_multipliers(sys: &MacrostateSystem, zeta_site: &[f64]) -> Result<Vec<f64>, String> {
    let sites = sys.basis().sites();
    let v = sys.basis().vectors();
    let modes = v.nrows();
    let mut mode_part = vec![0.0; modes];
    for (m, out) in mode_part.iter_mut().enumerate() {
        for (i, z) in zeta_site[..sites].iter().enumerate() {
            *out += v[[m, i]] * z;
        }
    }
    // The mode rows are orthonormal, so projecting back onto the sites
    // reveals any multiplier weight the kept modes cannot carry.
    let mut lost = 0.0f64;
    for (i, z) in zeta_site[..sites].iter().enumerate() {
        let mut back = 0.0;
        for (m, w) in mode_part.iter().enumerate() {
            back += v[[m, i]] * w;
        }
        lost = lost.max((back - z).abs());
    }
    if lost > 1e-10 {
        return Err(format!(
            "initial.prepared.zeta_t0 has site-resolved structure (weight {lost:.3e}) beyond \
             the kept modes; raise mode_cutoff to {} to represent it",
            sites / 2
        ));
    }
    let mut zeta = mode_part;
    zeta.extend_from_slice(&zeta_site[sites..]);
    Ok(zeta)
}

/// Expectations of the conserved constraint operators in `rho`.
pub fn conserved_targets(sys: &MacrostateSystem, rho: &DensityOperator) -> Vec<f64> {
    sys.ops()
        .iter()
        .zip(sys.conserved())
        .filter(|(_, &c)| c)
        .map(|(op, _)| expectation(op, rho))
        .collect()
}

/// The maximum-entropy state constrained only by the conserved totals of
/// `rho` — the equilibrium every driven mode relaxes toward, and the state
/// whose correlation functions set the decay time.
pub fn conserved_equilibrium(
    sys: &MacrostateSystem,
    rho: &DensityOperator,
    settings: &macrostate::InversionSettings,
) -> Result<GibbsState, String> {
    let ops: Vec<_> = sys
        .ops()
        .iter()
        .zip(sys.conserved())
        .filter(|(_, &c)| c)
        .map(|(op, _)| op.clone())
        .collect();
    let targets = conserved_targets(sys, rho);
    macrostate::MacrostateProjector::new(ops, settings.clone())
        .and_then(|mut p| p.invert(&targets))
        .map_err(|e| format!("conserved-totals equilibrium inversion failed: {e}"))
}
