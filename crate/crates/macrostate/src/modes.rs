//! Orthonormal lattice-mode transforms of the site densities.
//!
//! The evolution equations close over a finite list of slow variables. On a
//! chain the natural list is the discrete Fourier transform of the site
//! densities, truncated at a wavenumber cutoff: the uniform mode is the
//! conserved total, and each retained wavenumber contributes a real
//! cosine/sine pair so every transformed operator stays Hermitian.

use ndarray::prelude::*;

use crate::error::{Error, Result};
use crate::model::ObservableSet;
use crate::operator::HermitianOperator;
use crate::tolerances as tol;

/// Real orthonormal functions over lattice sites.
#[derive(Debug, Clone)]
pub struct ModeBasis {
    /// Row `m` holds mode `m` sampled over the sites.
    vectors: Array2<f64>,
    /// Wavenumber of each mode (0 for the uniform mode).
    orders: Vec<usize>,
    /// Short name for each mode ("k0", "cos1", "sin1", ...).
    suffixes: Vec<String>,
}

impl ModeBasis {
    /// Discrete Fourier set over `sites` lattice points, keeping wavenumbers
    /// up to `n_max`: the uniform mode, then a cosine/sine pair per
    /// wavenumber (the alternating-sign mode alone at the Nyquist point of
    /// an even chain).
    pub fn fourier(sites: usize, n_max: usize) -> Result<Self> {
        if sites == 0 {
            return Err(Error::InvalidModel("mode basis needs at least one site".into()));
        }
        let l = sites as f64;
        let mut rows: Vec<Array1<f64>> = vec![Array1::from_elem(sites, 1.0 / l.sqrt())];
        let mut orders = vec![0usize];
        let mut suffixes = vec!["k0".to_string()];
        let k_cut = n_max.min(sites / 2);
        for k in 1..=k_cut {
            if 2 * k == sites {
                // Nyquist mode: the sine partner vanishes identically.
                let sign = |j: usize| if j % 2 == 0 { 1.0 } else { -1.0 };
                let row = Array1::from_shape_fn(sites, |j| sign(j) / l.sqrt());
                rows.push(row);
                orders.push(k);
                suffixes.push(format!("cos{k}"));
            } else {
                let scale = (2.0 / l).sqrt();
                let theta = 2.0 * std::f64::consts::PI * k as f64 / l;
                rows.push(Array1::from_shape_fn(sites, |j| {
                    scale * (theta * j as f64).cos()
                }));
                orders.push(k);
                suffixes.push(format!("cos{k}"));
                rows.push(Array1::from_shape_fn(sites, |j| {
                    scale * (theta * j as f64).sin()
                }));
                orders.push(k);
                suffixes.push(format!("sin{k}"));
            }
        }
        let mut vectors = Array2::zeros((rows.len(), sites));
        for (m, row) in rows.iter().enumerate() {
            vectors.row_mut(m).assign(row);
        }
        let basis = Self {
            vectors,
            orders,
            suffixes,
        };
        let defect = basis.gram_defect();
        if defect > tol::MODE_ORTHONORMALITY_ABS {
            return Err(Error::NumericalBreakdown(format!(
                "mode basis orthonormality defect {defect:.3e}"
            )));
        }
        Ok(basis)
    }

    /// The complete Fourier basis (every wavenumber retained).
    pub fn full(sites: usize) -> Result<Self> {
        Self::fourier(sites, sites / 2)
    }

    pub fn num_modes(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn sites(&self) -> usize {
        self.vectors.ncols()
    }

    /// True when the modes span all site configurations.
    pub fn is_complete(&self) -> bool {
        self.num_modes() == self.sites()
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn orders(&self) -> &[usize] {
        &self.orders
    }

    pub fn suffixes(&self) -> &[String] {
        &self.suffixes
    }

    /// Largest deviation of the Gram matrix from the identity.
    pub fn gram_defect(&self) -> f64 {
        let gram = self.vectors.dot(&self.vectors.t());
        let mut worst = 0.0f64;
        for ((i, j), g) in gram.indexed_iter() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g - target).abs());
        }
        worst
    }
}

/// Site densities combined into lattice modes.
#[derive(Debug, Clone)]
pub struct ModeSet {
    pub ops: Vec<HermitianOperator>,
    pub labels: Vec<String>,
    /// Wavenumber of each mode operator.
    pub orders: Vec<usize>,
}

/// Transforms the site densities of `obs` into the mode combinations
/// `sum_sites u_m(site) * A(site)`. The uniform mode is the conserved total
/// scaled by `1/sqrt(L)`.
pub fn mode_transform(obs: &ObservableSet, basis: &ModeBasis) -> Result<ModeSet> {
    let sites = obs.observables().len();
    if basis.sites() != sites {
        return Err(Error::DimensionMismatch {
            left: basis.sites(),
            right: sites,
            context: "mode basis vs lattice sites".into(),
        });
    }
    let family = obs
        .observable_labels()
        .first()
        .and_then(|l| l.rsplit_once('_').map(|(head, _)| head.to_string()))
        .unwrap_or_else(|| "dens".to_string());
    let dim = obs.dim();
    let mut ops = Vec::with_capacity(basis.num_modes());
    let mut labels = Vec::with_capacity(basis.num_modes());
    for m in 0..basis.num_modes() {
        let mut acc = HermitianOperator::zeros(dim);
        for (site, op) in obs.observables().iter().enumerate() {
            let w = basis.vectors()[[m, site]];
            if w != 0.0 {
                acc = &acc + &op.scaled(w);
            }
        }
        ops.push(acc);
        labels.push(format!("{family}_{}", basis.suffixes()[m]));
    }
    Ok(ModeSet {
        ops,
        labels,
        orders: basis.orders().to_vec(),
    })
}
