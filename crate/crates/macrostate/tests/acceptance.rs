//! Release acceptance gate for the library: one test per criterion, each
//! with its tolerances pinned inline and a final `PASS criterion N` line
//! reporting the measured margins. Run with `--nocapture` to see the lines
//! for passing criteria too; the numbering continues in the command-line
//! crate, whose own gate covers the determinism criterion.

mod common;

use common::*;
use macrostate::{
    coarse_grained_generator, decompose, estimate_tau, exact_macrostate_trajectory, expectation,
    gibbs_state, heisenberg_evolve, i_commutator, integrate_zeta, invert_macrostate,
    prepared_state, project_macrostate, rewriting_identity_residual, unitary_evolve_state,
    GibbsState, HermitianOperator, InversionSettings, MemorySettings, PreparationSchedule,
    ZetaTrajectory,
};
use ndarray::prelude::*;
use rand::Rng;

/// Round trip of the maximum-entropy construction on the 4-site chain
/// (dimension 16) with the per-site densities plus the Hamiltonian as
/// constraints: build the state from random multipliers, read its
/// expectations, invert them back.
#[test]
fn criterion_01_max_entropy_round_trip() {
    let model = xxz_model(4);
    assert_eq!(model.hamiltonian.dim(), 16);
    let ops = model.observables.macrostate_ops();
    let settings = InversionSettings::default();
    let mut r = rng(0xacce_0001);
    let trials = 100usize;
    let mut worst_exp = 0.0f64;
    let mut worst_zeta = 0.0f64;
    for _ in 0..trials {
        let zeta = random_zeta(&mut r, ops.len(), 0.6);
        let g = gibbs_state(&ops, &zeta).unwrap();
        let targets: Vec<f64> = ops.iter().map(|op| g.expectation(op).unwrap()).collect();
        let rec = invert_macrostate(&ops, &targets, &settings).unwrap();
        for (j, op) in ops.iter().enumerate() {
            worst_exp = worst_exp.max((rec.expectation(op).unwrap() - targets[j]).abs());
            worst_zeta = worst_zeta.max((rec.params().zeta[j] - zeta[j]).abs());
        }
    }
    assert!(worst_exp <= 1e-8, "worst expectation error {worst_exp:.3e}");
    assert!(worst_zeta <= 1e-6, "worst multiplier error {worst_zeta:.3e}");
    println!(
        "PASS criterion 1: {trials} round trips; expectations within {worst_exp:.3e} \
         (<= 1e-8), multipliers within {worst_zeta:.3e} (<= 1e-6)"
    );
}

/// The correlation form against a brute-force 129-point Simpson quadrature
/// of its defining one-parameter integral on dimension-8 states, plus the
/// algebraic suite: symmetry, bilinearity, and positive semidefiniteness.
#[test]
fn criterion_02_correlation_form_against_quadrature() {
    let mut r = rng(0xacce_0002);
    let mut worst_quad = 0.0f64;
    let mut worst_sym = 0.0f64;
    let mut worst_lin = 0.0f64;
    let mut min_minor = f64::INFINITY;
    for _ in 0..10 {
        let g = GibbsState::from_exponent(&random_hermitian(&mut r, 8, 0.8)).unwrap();
        let a = random_hermitian(&mut r, 8, 1.0);
        let b = random_hermitian(&mut r, 8, 1.0);
        let c = random_hermitian(&mut r, 8, 1.0);

        let ab = g.kubo_inner(&a, &b).unwrap();
        worst_quad = worst_quad.max((ab - simpson_kubo(&g, &a, &b, 129)).abs());
        worst_sym = worst_sym.max((ab - g.kubo_inner(&b, &a).unwrap()).abs());

        let combo = &b.scaled(0.7) + &c.scaled(1.3);
        let lhs = g.kubo_inner(&a, &combo).unwrap();
        let rhs = 0.7 * ab + 1.3 * g.kubo_inner(&a, &c).unwrap();
        worst_lin = worst_lin.max((lhs - rhs).abs());

        // Positivity via the leading principal minors of a 3x3 Gram matrix.
        let gram = g.kubo_covariance(&[a, b, c]).unwrap();
        let m1 = gram[[0, 0]];
        let m2 = gram[[0, 0]] * gram[[1, 1]] - gram[[0, 1]] * gram[[1, 0]];
        let m3 = gram[[0, 0]] * (gram[[1, 1]] * gram[[2, 2]] - gram[[1, 2]] * gram[[2, 1]])
            - gram[[0, 1]] * (gram[[1, 0]] * gram[[2, 2]] - gram[[1, 2]] * gram[[2, 0]])
            + gram[[0, 2]] * (gram[[1, 0]] * gram[[2, 1]] - gram[[1, 1]] * gram[[2, 0]]);
        min_minor = min_minor.min(m1).min(m2).min(m3);
    }
    assert!(worst_quad <= 1e-7, "quadrature gap {worst_quad:.3e}");
    assert!(worst_sym <= 1e-10, "asymmetry {worst_sym:.3e}");
    assert!(worst_lin <= 1e-10, "nonlinearity {worst_lin:.3e}");
    assert!(min_minor >= -1e-10, "indefinite Gram minor {min_minor:.3e}");
    println!(
        "PASS criterion 2: quadrature gap {worst_quad:.3e} (<= 1e-7); symmetry \
         {worst_sym:.3e}, linearity {worst_lin:.3e} (<= 1e-10); Gram minors >= {min_minor:.3e}"
    );
}

/// Balance between observable rates and multiplier velocities along an
/// exact projected trajectory: central-difference d<A_j>/dt must equal
/// minus the correlation matrix times central-difference multiplier
/// velocities, to 1e-4 relative at dt = 1e-3 and about four times better
/// at half the step.
#[test]
fn criterion_03_rate_balance_along_exact_trajectory() {
    let sys = xxz_system(4, 1);
    // A strong quench: the truncation term of the central differences is
    // driven by how fast the correlation matrix itself moves along the
    // trajectory, so a barely-perturbed state would leave nothing above the
    // solver noise floor to measure the step-halving ratio on.
    let zeta0 = vec![0.4, 0.8, -0.6, 0.3];
    let settings = InversionSettings {
        tol: 1e-13,
        ..InversionSettings::default()
    };

    let relative_error = |dt: f64| {
        let g0 = sys.gibbs(&zeta0).unwrap();
        let traj =
            exact_macrostate_trajectory(&sys, g0.state(), 0.0, dt, 2, settings.clone()).unwrap();
        let n = sys.num_ops();
        let mut dexp = Array1::zeros(n);
        let mut zdot = Array1::zeros(n);
        for j in 0..n {
            dexp[j] = (traj.expectations[[2, j]] - traj.expectations[[0, j]]) / (2.0 * dt);
            zdot[j] = (traj.zeta[[2, j]] - traj.zeta[[0, j]]) / (2.0 * dt);
        }
        let mid = sys.gibbs(&traj.zeta.row(1).to_vec()).unwrap();
        let k = mid.kubo_covariance(sys.ops()).unwrap();
        let pred = -k.dot(&zdot);
        let num = (&dexp - &pred).mapv(|v| v * v).sum().sqrt();
        num / dexp.mapv(|v| v * v).sum().sqrt()
    };

    let coarse = relative_error(1e-3);
    let fine = relative_error(5e-4);
    let ratio = coarse / fine;
    assert!(coarse <= 1e-4, "relative error {coarse:.3e} at dt = 1e-3");
    assert!(
        (3.0..=5.0).contains(&ratio),
        "halving the step improved the error by {ratio:.3}, not ~4 \
         ({coarse:.3e} -> {fine:.3e})"
    );
    println!(
        "PASS criterion 3: relative balance error {coarse:.3e} (<= 1e-4) at dt = 1e-3, \
         improving {ratio:.3}x (in [3, 5]) at dt/2"
    );
}

/// The two evaluation routes for an evolved prepared state — evolve the
/// normalized state unitarily, or shift the whole exponent to time t and
/// re-normalize — agree to 1e-10 in Frobenius norm on random schedules.
#[test]
fn criterion_04_dual_route_identity() {
    let mut r = rng(0xacce_0004);
    let mut worst = 0.0f64;
    let mut trials = 0usize;
    for sites in [3usize, 4] {
        let model = xxz_model(sites);
        let obs = &model.observables;
        let h = &model.hamiltonian;
        for _ in 0..5 {
            let sched = random_schedule(
                &mut r,
                obs.observables().len(),
                obs.currents().len(),
                obs.macrostate_ops().len(),
                0.0,
                1.0,
                0.15,
            );
            let t = r.gen_range(0.2..1.0);
            let rho0 = prepared_state(&sched, obs, h).unwrap();
            let by_state = unitary_evolve_state(&rho0, h, t).unwrap();
            let x0 = macrostate::preparation_exponent(&sched, obs, h).unwrap();
            let by_exponent = GibbsState::from_exponent(&heisenberg_evolve(&x0, h, -t).unwrap())
                .unwrap()
                .into_state();
            let d = frob_diff(by_state.matrix(), by_exponent.matrix());
            worst = worst.max(d);
            assert!(d <= 1e-10, "route gap {d:.3e} on a {sites}-site schedule");
            trials += 1;
        }
    }
    println!(
        "PASS criterion 4: {trials} random schedules; worst dual-route gap \
         {worst:.3e} (<= 1e-10)"
    );
}

/// Rewriting the prepared exponent as a boundary term plus a history
/// integral of multiplier velocities: the residual of the identity falls
/// off quadratically with the quadrature step and reaches 1e-6 on a
/// dimension-16 scenario at step (t - t0)/256.
#[test]
fn criterion_05_rewriting_identity_residual() {
    let model = xxz_model(4);
    let obs = &model.observables;
    let h = &model.hamiltonian;
    let n = obs.macrostate_ops().len();
    let t0 = 0.0;
    let t = 0.75;

    let residual_at = |steps: usize| {
        let times: Vec<f64> = (0..=steps)
            .map(|k| t0 + (t - t0) * k as f64 / steps as f64)
            .collect();
        let mut zeta = Array2::zeros((times.len(), n));
        let mut zeta_dot = Array2::zeros((times.len(), n));
        for (k, &tk) in times.iter().enumerate() {
            for j in 0..n {
                let (amp, om) = (0.025 + 0.005 * j as f64, 1.0 + 0.3 * j as f64);
                zeta[[k, j]] = amp * (om * (tk - t0)).sin() + 0.1;
                zeta_dot[[k, j]] = amp * om * (om * (tk - t0)).cos();
            }
        }
        let traj = ZetaTrajectory {
            times,
            zeta,
            zeta_dot,
        };
        let sched = PreparationSchedule::gibbs_only(t0, traj.zeta.row(0).to_vec());
        rewriting_identity_residual(&sched, obs, h, t, &traj).unwrap()
    };

    let r64 = residual_at(64);
    let r128 = residual_at(128);
    let r256 = residual_at(256);
    let order1 = (r64 / r128).log2();
    let order2 = (r128 / r256).log2();
    assert!(
        (1.8..=2.2).contains(&order1) && (1.8..=2.2).contains(&order2),
        "orders {order1:.3}, {order2:.3} outside [1.8, 2.2] \
         (residuals {r64:.3e}, {r128:.3e}, {r256:.3e})"
    );
    assert!(r256 <= 1e-6, "finest residual {r256:.3e}");
    println!(
        "PASS criterion 5: convergence orders {order1:.3}, {order2:.3} (in [1.8, 2.2]); \
         residual {r256:.3e} (<= 1e-6) at step (t - t0)/256"
    );
}

/// First-order cumulant correction under an exponent perturbation: the
/// leftover error is quadratic in the perturbation strength, so doubling
/// the strength from 0.01 to 0.02 multiplies it by ~4 for every random
/// (probe, perturbation, exponent) triple.
#[test]
fn criterion_06_cumulant_correction_scaling() {
    let mut r = rng(0xacce_0006);
    let trials = 20usize;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for trial in 0..trials {
        let probe = random_hermitian(&mut r, 8, 1.0);
        let perturb = random_hermitian(&mut r, 8, 1.0);
        let exponent = random_hermitian(&mut r, 8, 0.7);
        let g = GibbsState::from_exponent(&exponent).unwrap();
        let error_at = |lambda: f64| {
            let approx = g.cumulant_expectation(&probe, &perturb.scaled(lambda)).unwrap();
            let exact = GibbsState::from_exponent(&(&exponent + &perturb.scaled(lambda)))
                .unwrap()
                .expectation(&probe)
                .unwrap();
            (approx - exact).abs()
        };
        let ratio = error_at(0.02) / error_at(0.01);
        assert!(
            (3.5..=4.5).contains(&ratio),
            "trial {trial}: error ratio {ratio:.3} outside [3.5, 4.5]"
        );
        lo = lo.min(ratio);
        hi = hi.max(ratio);
    }
    println!(
        "PASS criterion 6: {trials} random triples; error ratios in \
         [{lo:.3}, {hi:.3}] (within [3.5, 4.5])"
    );
}

/// One exact evolution step away from a constrained-equilibrium start can
/// only raise the projected entropy, and conserved expectations survive the
/// evolve-then-project round trip.
#[test]
fn criterion_07_single_step_entropy_inequality() {
    let sys = xxz_system(4, 1);
    let settings = InversionSettings::default();
    let mut r = rng(0xacce_0007);
    let trials = 50usize;
    let mut min_gain = f64::INFINITY;
    let mut worst_drift = 0.0f64;
    for trial in 0..trials {
        let zeta0 = random_zeta(&mut r, sys.num_ops(), 0.5);
        let tau = r.gen_range(0.05..1.5);
        let g0 = sys.gibbs(&zeta0).unwrap();
        let moved = unitary_evolve_state(g0.state(), sys.hamiltonian(), tau).unwrap();
        let g1 = project_macrostate(sys.ops(), &moved, &settings).unwrap();
        let gain = g1.entropy() - g0.entropy();
        min_gain = min_gain.min(gain);
        assert!(
            gain >= -1e-8,
            "trial {trial}: entropy fell by {:.3e} over tau = {tau:.3}",
            -gain
        );
        for (j, op) in sys.ops().iter().enumerate() {
            if !sys.conserved()[j] {
                continue;
            }
            let drift = (g1.expectation(op).unwrap() - g0.expectation(op).unwrap()).abs();
            worst_drift = worst_drift.max(drift);
            assert!(drift <= 1e-8, "trial {trial}: conserved drift {drift:.3e}");
        }
    }
    println!(
        "PASS criterion 7: {trials} evolve-project steps; entropy gain >= {min_gain:.3e} \
         (>= -1e-8), conserved drift <= {worst_drift:.3e} (<= 1e-8)"
    );
}

/// The closed memory equations against the exact oracle on a 6-site chain:
/// a near-equilibrium quench of strength lambda produces expectation
/// deviations that scale quadratically, so halving lambda divides the worst
/// deviation over one correlation time by a factor in [3, 6].
#[test]
fn criterion_08_memory_closure_quadratic_in_quench() {
    let sys = xxz_system(6, 1);
    assert_eq!(sys.dim(), 64);
    let base = vec![0.4, 0.0, 0.0, 0.3];
    let eq = sys.gibbs(&base).unwrap();
    let est = estimate_tau(&sys, &eq, 8.0, 0.05).unwrap();
    let t_end = est.tau_est.expect("driven correlations decay on this chain");
    // Fine enough that the integrator's own discretization floor stays two
    // orders below the smaller quench's modeling deviation; otherwise the
    // floor drags the measured ratio toward one.
    let steps = 48usize;
    let dt = t_end / steps as f64;

    let deviation = |lambda: f64| {
        let mut zeta0 = base.clone();
        zeta0[1] += lambda;
        let g0 = sys.gibbs(&zeta0).unwrap();
        let exact = exact_macrostate_trajectory(
            &sys,
            g0.state(),
            0.0,
            dt,
            steps,
            InversionSettings::default(),
        )
        .unwrap();
        let sched = sys.empty_schedule(0.0);
        let mem = MemorySettings {
            tau: t_end,
            truncate_history: false,
            dt,
            order: 1,
        };
        let closed = integrate_zeta(&sys, &zeta0, &sched, &mem, t_end).unwrap();
        let mut worst = 0.0f64;
        for k in 0..exact.len() {
            for j in 0..sys.num_ops() {
                worst = worst
                    .max((exact.expectations[[k, j]] - closed.expectations[[k, j]]).abs());
            }
        }
        worst
    };

    let d2 = deviation(0.1);
    let d1 = deviation(0.05);
    let ratio = d2 / d1;
    assert!(
        (3.0..=6.0).contains(&ratio),
        "deviation ratio {ratio:.3} outside [3, 6] ({d2:.3e} vs {d1:.3e} \
         over [0, {t_end:.3}])"
    );
    println!(
        "PASS criterion 8: worst deviations {d2:.3e} / {d1:.3e} over one correlation \
         time ({t_end:.3}); halving ratio {ratio:.3} (in [3, 6])"
    );
}

/// The coarse-grained generator's expectation approaches the commutator
/// drift linearly in the window, and the orthogonal decomposition is
/// idempotent and norm-preserving.
#[test]
fn criterion_09_coarse_grained_generator_limit() {
    let sys = xxz_system(3, 1);
    let zeta = vec![0.35, 0.2, -0.15, 0.25];
    let g = sys.gibbs(&zeta).unwrap();
    let a = sys.ops()[1].clone();
    let drift = expectation(&i_commutator(sys.hamiltonian(), &a).unwrap(), g.state());
    let gap = |tau: f64| {
        let la = coarse_grained_generator(&a, sys.eigensystem(), tau).unwrap();
        (expectation(&la, g.state()) - drift).abs()
    };
    let coarse = gap(1e-3);
    let fine = gap(5e-4);
    let ratio = coarse / fine;
    assert!(
        (1.8..=2.2).contains(&ratio),
        "window-halving ratio {ratio:.3} outside [1.8, 2.2] ({coarse:.3e} vs {fine:.3e})"
    );

    let conserved: Vec<HermitianOperator> = sys
        .ops()
        .iter()
        .zip(sys.conserved())
        .filter(|(_, &c)| c)
        .map(|(op, _)| op.clone())
        .collect();
    let driven: Vec<HermitianOperator> = sys
        .ops()
        .iter()
        .zip(sys.conserved())
        .filter(|(_, &c)| !c)
        .map(|(op, _)| op.clone())
        .collect();
    let dec = decompose(&driven, &conserved, &g).unwrap();
    let mut worst_idem = 0.0f64;
    let mut worst_pyth = 0.0f64;
    for (op, split) in driven.iter().zip(dec.components()) {
        let again = decompose(&[split.orthogonal.clone()], &conserved, &g).unwrap();
        worst_idem = worst_idem.max(again.components()[0].parallel.frobenius_norm());
        let full = g.kubo_inner(op, op).unwrap();
        let parts = g.kubo_inner(&split.parallel, &split.parallel).unwrap()
            + g.kubo_inner(&split.orthogonal, &split.orthogonal).unwrap();
        worst_pyth = worst_pyth.max((full - parts).abs() / full.max(1.0));
    }
    assert!(worst_idem <= 1e-10, "idempotence defect {worst_idem:.3e}");
    assert!(worst_pyth <= 1e-9, "norm-split defect {worst_pyth:.3e}");
    println!(
        "PASS criterion 9: generator slope ratio {ratio:.3} (in [1.8, 2.2]); \
         idempotence defect {worst_idem:.3e} (<= 1e-10); norm split within \
         {worst_pyth:.3e} (<= 1e-9)"
    );
}
