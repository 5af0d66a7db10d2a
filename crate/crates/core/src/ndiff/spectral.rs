//! Singular-value box constraints on weight matrices.
//!
//! With every weight matrix's singular values in `[sigma_min, sigma_max]`,
//! `sigma_max <= 1` and a 1-Lipschitz activation, the network is 1-Lipschitz
//! in the 2-norm.

use nalgebra::{DMatrix, SVD};
use serde::{Deserialize, Serialize};

use super::Mlp;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralBounds {
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl SpectralBounds {
    pub fn new(sigma_min: f64, sigma_max: f64) -> Result<Self> {
        let b = Self { sigma_min, sigma_max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min >= 0.0 && self.sigma_min <= self.sigma_max && self.sigma_max.is_finite()) {
            return Err(Error::config(
                "spectral_bounds",
                format!(
                    "need 0 <= sigma_min <= sigma_max, got [{}, {}]",
                    self.sigma_min, self.sigma_max
                ),
            ));
        }
        Ok(())
    }

    pub fn contains(&self, s: f64, tol: f64) -> bool {
        s >= self.sigma_min - tol && s <= self.sigma_max + tol
    }
}

fn svd(rows: usize, cols: usize, w: &[f64], layer: usize) -> Result<SVD<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Svd {
            layer,
            reason: "non-finite weights".into(),
        });
    }
    let m = DMatrix::from_row_slice(rows, cols, w);
    SVD::try_new(m, true, true, f64::EPSILON, 0).ok_or_else(|| Error::Svd {
        layer,
        reason: "no convergence".into(),
    })
}

/// Clamps the singular values of a row-major `rows x cols` matrix in place.
/// Returns whether the matrix was modified.
pub fn project_matrix(rows: usize, cols: usize, w: &mut [f64], bounds: &SpectralBounds, layer: usize) -> Result<bool> {
    let svd = svd(rows, cols, w, layer)?;
    if svd.singular_values.iter().all(|&s| bounds.contains(s, 0.0)) {
        return Ok(false);
    }
    let u = svd.u.as_ref().expect("requested U");
    let vt = svd.v_t.as_ref().expect("requested V^T");
    let clamped = svd.singular_values.map(|s| s.clamp(bounds.sigma_min, bounds.sigma_max));
    let rebuilt = u * DMatrix::from_diagonal(&clamped) * vt;
    for r in 0..rows {
        for c in 0..cols {
            w[r * cols + c] = rebuilt[(r, c)];
        }
    }
    Ok(true)
}

/// Projects every weight matrix of `net` into the spectral box; biases are untouched.
pub fn project_spectrum(net: &mut Mlp, bounds: &SpectralBounds) -> Result<()> {
    bounds.validate()?;
    for l in 0..net.n_layers() {
        let (cols, rows) = (net.dims()[l], net.dims()[l + 1]);
        let (w, _) = net.layer_mut(l);
        project_matrix(rows, cols, w, bounds, l)?;
    }
    Ok(())
}

/// Singular values of every weight matrix, layer by layer.
pub fn singular_values(net: &Mlp) -> Result<Vec<Vec<f64>>> {
    (0..net.n_layers())
        .map(|l| {
            let (cols, rows) = (net.dims()[l], net.dims()[l + 1]);
            let (w, _) = net.layer(l);
            Ok(svd(rows, cols, w, l)?.singular_values.iter().copied().collect())
        })
        .collect()
}
