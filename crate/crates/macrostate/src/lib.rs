//! Classical macrostates for isolated quantum spin systems.
//!
//! A macrostate is a finite list of multipliers `zeta` pairing with a fixed
//! set of slow observables (site densities of a conserved quantity plus the
//! constants of motion). The crate builds the exponential states those
//! multipliers parametrize, inverts expectation targets back to multipliers,
//! prepares states through finite-time histories, propagates `zeta(t)` with a
//! memory-kernel equation of motion, and coarse-grains the dynamics into a
//! time-local generator when a separation of time scales supports it.
//!
//! Matrices are dense `Complex64` arrays; everything is exact at small
//! Hilbert-space dimension (spin chains up to a dozen sites), which is the
//! regime where the memory integrals can be checked against direct
//! simulation.

pub mod error;
pub mod evolution;
pub mod gibbs;
pub mod linsolve;
pub mod maxent;
pub mod model;
pub mod modes;
pub mod operator;
pub mod preparation;
pub mod semigroup;
pub mod tolerances;

pub use error::{Error, Result};
pub use evolution::{
    entropy_report, estimate_tau, exact_macrostate_trajectory, integrate_zeta,
    memory_kernel_term, zeta_dot_solve, EntropyReport, MacrostateSystem, MemorySettings,
    TauEstimate, Trajectory,
};
pub use gibbs::{gibbs_state, GibbsState, MacrostateParams};
pub use maxent::{invert_macrostate, project_macrostate, InversionSettings, MacrostateProjector};
pub use model::{build_model, continuity_residual, CustomModel, Model, ModelKind, ModelSpec, ObservableSet};
pub use modes::{mode_transform, ModeBasis, ModeSet};
pub use operator::{
    commutator, expectation, heisenberg_evolve, i_commutator, unitary_evolve_state, CMatrix,
    DensityOperator, EigenSystem, HermitianOperator,
};
pub use semigroup::{
    coarse_grained_generator, decompose, decompose_system, reduced_dynamics_step,
    reduced_trajectory, tau_independence_diagnostic, ObservableSplit, OrthogonalDecomposition,
    ReducedStep, TauIndependence,
};
pub use preparation::{
    evolved_prepared_state, preparation_exponent, prepared_state, rewriting_identity_residual,
    HistoryTerm, PreparationSchedule, TestFunction, ZetaTrajectory,
};
