//! Shared fixtures for the integration suites: seeded random operators and
//! states, an independent quadrature oracle for the Kubo form, and model
//! builders.
#![allow(dead_code)]

use macrostate::{
    build_model, CMatrix, DensityOperator, GibbsState, HermitianOperator, HistoryTerm,
    MacrostateSystem, Model, ModelSpec, PreparationSchedule, TestFunction,
};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random Hermitian matrix with entries of magnitude ~`scale`.
pub fn random_hermitian(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> HermitianOperator {
    let mut m = CMatrix::zeros((dim, dim));
    for i in 0..dim {
        m[[i, i]] = C64::new(rng.gen_range(-scale..scale), 0.0);
        for j in (i + 1)..dim {
            let z = C64::new(rng.gen_range(-scale..scale), rng.gen_range(-scale..scale));
            m[[i, j]] = z;
            m[[j, i]] = z.conj();
        }
    }
    HermitianOperator::new(m).expect("construction is Hermitian")
}

/// Random full-rank density operator: a Gibbs state of a random exponent.
pub fn random_density(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> DensityOperator {
    let exponent = random_hermitian(rng, dim, scale);
    GibbsState::from_exponent(&exponent)
        .expect("random exponent is a valid state")
        .into_state()
}

/// Frobenius distance between two complex matrices.
pub fn frob_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    (a - b).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Independent oracle for the centered Kubo form: a Simpson quadrature in
/// the interpolation variable `u` of `Tr A e^{uC} B e^{(1-u)C}`, done
/// directly from the state's populations, minus the product of means.
/// `points` must be odd (Simpson needs an even interval count).
pub fn simpson_kubo(
    g: &GibbsState,
    a: &HermitianOperator,
    b: &HermitianOperator,
    points: usize,
) -> f64 {
    assert!(points >= 3 && points % 2 == 1, "need an odd point count");
    let eig = g.eigensystem();
    let at = eig.to_eigenbasis(a.matrix());
    let bt = eig.to_eigenbasis(b.matrix());
    let p = g.populations();
    let c: Vec<f64> = p.iter().map(|&pm| pm.ln()).collect();
    let dim = p.len();

    let f = |u: f64| -> f64 {
        let mut acc = 0.0;
        for m in 0..dim {
            for n in 0..dim {
                let w = (u * c[n] + (1.0 - u) * c[m]).exp();
                acc += (at[[m, n]] * bt[[n, m]]).re * w;
            }
        }
        acc
    };

    let intervals = points - 1;
    let h = 1.0 / intervals as f64;
    let mut integral = f(0.0) + f(1.0);
    for k in 1..intervals {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        integral += w * f(k as f64 * h);
    }
    integral *= h / 3.0;

    let mean = |mt: &CMatrix| -> f64 {
        (0..dim).map(|m| mt[[m, m]].re * p[m]).sum()
    };
    integral - mean(&at) * mean(&bt)
}

/// Builds the default anisotropic chain model.
pub fn xxz_model(sites: usize) -> Model {
    build_model(&ModelSpec::xxz_chain(sites, 1.0, 0.5, 0.3)).expect("valid chain spec")
}

/// Mode-space constraint system over the default chain.
pub fn xxz_system(sites: usize, n_max: usize) -> MacrostateSystem {
    MacrostateSystem::new(&xxz_model(sites), n_max).expect("valid system")
}

/// Random test function of bounded magnitude.
pub fn random_test_function(rng: &mut ChaCha8Rng, span: f64) -> TestFunction {
    match rng.gen_range(0..3u8) {
        0 => TestFunction::Cosine {
            omega: rng.gen_range(0.5..4.0),
        },
        1 => TestFunction::Constant {
            value: rng.gen_range(-1.0..1.0),
        },
        _ => TestFunction::GaussianWindow {
            center: rng.gen_range(-span..0.0),
            width: rng.gen_range(0.2..1.0) * span.max(0.2),
        },
    }
}

/// Random preparation schedule over `[t0 - span, t0]` with small history
/// coefficients, for a model with `n_obs` site densities, `n_cur` bond
/// currents, and `n_ops` constraint operators.
pub fn random_schedule(
    rng: &mut ChaCha8Rng,
    n_obs: usize,
    n_cur: usize,
    n_ops: usize,
    t0: f64,
    span: f64,
    strength: f64,
) -> PreparationSchedule {
    let n_density = rng.gen_range(1..=3.min(n_obs));
    let n_current = if n_cur == 0 {
        0
    } else {
        rng.gen_range(0..=2.min(n_cur))
    };
    let mut density_terms = Vec::new();
    for _ in 0..n_density {
        density_terms.push(HistoryTerm {
            operator_index: rng.gen_range(0..n_obs),
            coefficient: rng.gen_range(-strength..strength),
            function: random_test_function(rng, span),
        });
    }
    let mut current_terms = Vec::new();
    for _ in 0..n_current {
        current_terms.push(HistoryTerm {
            operator_index: rng.gen_range(0..n_cur),
            coefficient: rng.gen_range(-strength..strength),
            function: random_test_function(rng, span),
        });
    }
    let zeta_t0: Vec<f64> = (0..n_ops).map(|_| rng.gen_range(-0.4..0.4)).collect();
    let gamma_start: Vec<f64> = (0..n_ops)
        .map(|_| rng.gen_range(-strength..strength))
        .collect();
    PreparationSchedule {
        t_start: t0 - span,
        t0,
        gamma_start,
        density_terms,
        current_terms,
        zeta_t0,
        quadrature_step: None,
    }
}

/// Max-norm distance between two equal-length slices.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Uniform random multiplier vector in `[-r, r]^n`.
pub fn random_zeta(rng: &mut ChaCha8Rng, n: usize, r: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-r..r)).collect()
}
