//! Maximum-entropy inversion: recover the multipliers whose exponential
//! state reproduces prescribed expectation targets.
//!
//! The inversion minimizes the convex dual `F(zeta) = log Z(zeta) +
//! zeta . targets`; its gradient is `targets - <A>` and its Hessian is the
//! Kubo--Mori covariance, so damped Newton steps with an Armijo line search
//! converge globally whenever the targets are realizable.

use ndarray::prelude::*;

use crate::error::{Error, Result};
use crate::gibbs::GibbsState;
use crate::linsolve::solve_spd;
use crate::operator::{DensityOperator, HermitianOperator};
use crate::tolerances as tol;

/// Knobs for the Newton inversion.
#[derive(Debug, Clone)]
pub struct InversionSettings {
    /// Per-component stopping rule: `|<A_j> - t_j| <= tol * (1 + |t_j|)`.
    pub tol: f64,
    pub max_iters: usize,
    /// Initial step fraction for the line search.
    pub damping: f64,
    /// Ridge fraction used when the covariance is ill-conditioned.
    pub regularization: f64,
    /// Multiplier norm beyond which the targets are declared unreachable.
    pub divergence_bound: f64,
}

impl Default for InversionSettings {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iters: 200,
            damping: 1.0,
            regularization: 1e-12,
            divergence_bound: 1e6,
        }
    }
}

impl InversionSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidSettings("tol must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidSettings("max_iters must be at least 1".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidSettings("damping must lie in (0, 1]".into()));
        }
        if !(self.regularization >= 0.0 && self.regularization.is_finite()) {
            return Err(Error::InvalidSettings(
                "regularization must be nonnegative".into(),
            ));
        }
        if !(self.divergence_bound > 0.0) {
            return Err(Error::InvalidSettings(
                "divergence_bound must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Reusable inverter over a fixed operator list. Remembers the last
/// solution as a warm start, which matters when inverting along a smooth
/// trajectory of targets.
#[derive(Debug, Clone)]
pub struct MacrostateProjector {
    ops: Vec<HermitianOperator>,
    ranges: Vec<(f64, f64)>,
    settings: InversionSettings,
    warm: Option<Vec<f64>>,
    last_iterations: Option<usize>,
}

impl MacrostateProjector {
    pub fn new(ops: Vec<HermitianOperator>, settings: InversionSettings) -> Result<Self> {
        settings.validate()?;
        if ops.is_empty() {
            return Err(Error::InvalidModel("empty operator list".into()));
        }
        let ranges = ops
            .iter()
            .map(|op| op.eigenvalue_range())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            ops,
            ranges,
            settings,
            warm: None,
            last_iterations: None,
        })
    }

    pub fn ops(&self) -> &[HermitianOperator] {
        &self.ops
    }

    /// Newton iterations used by the most recent successful solve.
    pub fn last_iterations(&self) -> Option<usize> {
        self.last_iterations
    }

    pub fn reset_warm_start(&mut self) {
        self.warm = None;
    }

    /// Seeds the next solve with an explicit starting point.
    pub fn set_warm_start(&mut self, zeta: Vec<f64>) -> Result<()> {
        if zeta.len() != self.ops.len() {
            return Err(Error::DimensionMismatch {
                left: zeta.len(),
                right: self.ops.len(),
                context: "warm start".into(),
            });
        }
        self.warm = Some(zeta);
        Ok(())
    }

    /// Finds multipliers whose state has expectations `targets`.
    pub fn invert(&mut self, targets: &[f64]) -> Result<GibbsState> {
        if targets.len() != self.ops.len() {
            return Err(Error::DimensionMismatch {
                left: targets.len(),
                right: self.ops.len(),
                context: "targets".into(),
            });
        }
        // Necessary condition: each target strictly inside the spectral
        // range of its operator. Jointly unreachable targets are caught by
        // the divergence bound below.
        for (j, (&t, &(lo, hi))) in targets.iter().zip(&self.ranges).enumerate() {
            if !t.is_finite() || t <= lo || t >= hi {
                return Err(Error::NonRealizableTargets(format!(
                    "target {t} for operator {j} is outside the open spectral range ({lo}, {hi})"
                )));
            }
        }

        let n = self.ops.len();
        let mut zeta: Vec<f64> = match &self.warm {
            Some(w) if w.len() == n => w.clone(),
            _ => vec![0.0; n],
        };
        let t = Array1::from_iter(targets.iter().cloned());

        let mut state = GibbsState::new(&self.ops, &zeta)?;
        let mut dual = self.dual_value(&state, &t);
        for iter in 0..self.settings.max_iters {
            let means = Array1::from_iter(
                self.ops
                    .iter()
                    .map(|op| state.expectation(op))
                    .collect::<Result<Vec<_>>>()?,
            );
            let residual = &means - &t;
            let converged = residual
                .iter()
                .zip(t.iter())
                .all(|(r, tj)| r.abs() <= self.settings.tol * (1.0 + tj.abs()));
            if converged {
                self.warm = Some(zeta);
                self.last_iterations = Some(iter);
                return Ok(state);
            }

            let cov = state.kubo_covariance(&self.ops)?;
            let step = solve_spd(
                &cov,
                &residual,
                self.settings.regularization,
                tol::COVARIANCE_CONDITION_CAP,
            )?;
            // Descent direction for the dual: grad F . delta <= 0.
            let slope = -residual.dot(&step.x);
            // Near the optimum the decrease is quadratically small and the
            // sufficient-decrease test degenerates into comparing roundoff
            // noise; plain Newton converges on its own from there.
            let measurable = -slope > tol::DUAL_DECREASE_FLOOR * (1.0 + dual.abs());

            let mut s = self.settings.damping;
            let mut accepted = false;
            for _ in 0..45 {
                let candidate: Vec<f64> = zeta
                    .iter()
                    .zip(step.x.iter())
                    .map(|(z, d)| z + s * d)
                    .collect();
                if candidate.iter().map(|z| z * z).sum::<f64>().sqrt()
                    > self.settings.divergence_bound
                {
                    return Err(Error::NonRealizableTargets(format!(
                        "multipliers diverged beyond {} after {} iterations",
                        self.settings.divergence_bound, iter
                    )));
                }
                let cand_state = GibbsState::new(&self.ops, &candidate)?;
                let cand_dual = self.dual_value(&cand_state, &t);
                if !measurable || cand_dual <= dual + 1e-4 * s * slope {
                    zeta = candidate;
                    state = cand_state;
                    dual = cand_dual;
                    accepted = true;
                    break;
                }
                s *= 0.5;
            }
            if !accepted {
                let worst = residual
                    .iter()
                    .zip(t.iter())
                    .map(|(r, tj)| r.abs() / (1.0 + tj.abs()))
                    .fold(0.0f64, f64::max);
                return Err(Error::IterationLimit {
                    iters: iter,
                    residual: worst,
                });
            }
        }
        let means = Array1::from_iter(
            self.ops
                .iter()
                .map(|op| state.expectation(op))
                .collect::<Result<Vec<f64>>>()?,
        );
        let worst = means
            .iter()
            .zip(t.iter())
            .map(|(m, tj)| (m - tj).abs() / (1.0 + tj.abs()))
            .fold(0.0f64, f64::max);
        Err(Error::IterationLimit {
            iters: self.settings.max_iters,
            residual: worst,
        })
    }

    /// Projects a density operator onto the exponential family: matches all
    /// constraint expectations, maximizing entropy among states that do.
    pub fn project(&mut self, rho: &DensityOperator) -> Result<GibbsState> {
        let targets = self
            .ops
            .iter()
            .map(|op| {
                crate::operator::check_same_shape(rho.matrix(), op.matrix(), "project")?;
                Ok(crate::operator::trace_product(rho.matrix(), op.matrix()))
            })
            .collect::<Result<Vec<f64>>>()?;
        let state = self.invert(&targets)?;
        // The projection maximizes entropy subject to the matched moments,
        // so it can never fall below the entropy of the input state.
        let s_in = rho.von_neumann_entropy()?;
        if state.entropy() + tol::ENTROPY_SLACK < s_in {
            return Err(Error::NumericalBreakdown(format!(
                "projected entropy {} fell below input entropy {}",
                state.entropy(),
                s_in
            )));
        }
        Ok(state)
    }

    fn dual_value(&self, state: &GibbsState, targets: &Array1<f64>) -> f64 {
        state.log_partition()
            + state
                .params()
                .zeta
                .iter()
                .zip(targets.iter())
                .map(|(z, t)| z * t)
                .sum::<f64>()
    }
}

/// One-shot inversion without warm-start reuse.
pub fn invert_macrostate(
    ops: &[HermitianOperator],
    targets: &[f64],
    settings: &InversionSettings,
) -> Result<GibbsState> {
    MacrostateProjector::new(ops.to_vec(), settings.clone())?.invert(targets)
}

/// One-shot projection of a density operator.
pub fn project_macrostate(
    ops: &[HermitianOperator],
    rho: &DensityOperator,
    settings: &InversionSettings,
) -> Result<GibbsState> {
    MacrostateProjector::new(ops.to_vec(), settings.clone())?.project(rho)
}
