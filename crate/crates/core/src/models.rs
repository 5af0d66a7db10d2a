//! Model variants as vector fields over (output, input).
//!
//! | variant     | field                         | trained          |
//! |-------------|-------------------------------|------------------|
//! | blackbox    | MLP                           | MLP              |
//! | cblackbox   | MLP, spectral box + penalty   | MLP              |
//! | graybox     | physics structure, est. coeff | 8 coefficients   |
//! | hybrid:e    | frozen offset graybox + MLP   | MLP              |
//!
//! Graybox rows map onto the output ordering as
//! `theta' = q`, `psi' = r / cos(theta)`, then the surge, pitch-rate and
//! yaw-rate hydrodynamics, then the three actuator lags. The hydrodynamic
//! rows are driven by the lagged actuator states carried in `z`, as in the
//! truth plant, so the family contains the truth at `mu_hat = mu`.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::excitation::Dataset;
use crate::ndiff::bptt::output_residual;
use crate::ndiff::{project_spectrum, Mlp, SpectralBounds};
use crate::plant::{check_pitch, Input, Output, TruthParams};
use crate::seed::Rng;

/// Estimated coefficients `mu_hat` in the order
/// `X_uu, k, M_uq, M_q, B_zB, b, N_ur, c`, plus fixed delay gains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrayboxParams {
    pub mu: [f64; 8],
    pub delay_gains: [f64; 3],
}

impl GrayboxParams {
    pub fn from_truth(p: &TruthParams) -> Self {
        Self {
            mu: p.mu(),
            delay_gains: p.delay_gains(),
        }
    }

    /// Largest coordinate-wise relative error against the truth coefficients.
    pub fn max_relative_error(&self, truth: &TruthParams) -> f64 {
        self.mu
            .iter()
            .zip(truth.mu())
            .map(|(a, b)| ((a - b) / b).abs())
            .fold(0.0, f64::max)
    }
}

/// Relative parameter error `e_mu` in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ParamErrorLevel(f64);

impl ParamErrorLevel {
    pub fn new(e: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&e) {
            return Err(Error::config("e_mu", format!("must lie in [0, 1], got {e}")));
        }
        Ok(Self(e))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for ParamErrorLevel {
    type Error = Error;
    fn try_from(e: f64) -> Result<Self> {
        Self::new(e)
    }
}

impl From<ParamErrorLevel> for f64 {
    fn from(e: ParamErrorLevel) -> f64 {
        e.0
    }
}

impl fmt::Display for ParamErrorLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.fract() == 0.0 {
            write!(f, "{:.1}", self.0)
        } else {
            write!(f, "{}", self.0)
        }
    }
}

/// Samples `mu_hat` uniformly from the box `mu_i * [1 - e, 1 + e]` (endpoints
/// ordered for negative `mu_i`). Delay gains are copied from the truth.
///
/// Each coordinate is drawn as `mu_i (1 + e s_i)` with `s_i ~ U[-1, 1]`, so a
/// given RNG stream yields offsets that scale with `e`.
pub fn sample_offset_params(truth: &TruthParams, e_mu: ParamErrorLevel, rng: &mut Rng) -> GrayboxParams {
    let e = e_mu.value();
    let mu = truth.mu().map(|m| {
        let s: f64 = rng.random_range(-1.0..=1.0);
        m * (1.0 + e * s)
    });
    GrayboxParams {
        mu,
        delay_gains: truth.delay_gains(),
    }
}

/// Sampling interval for coordinate `mu_i` at error level `e`.
pub fn offset_interval(mu_i: f64, e: f64) -> (f64, f64) {
    let (a, b) = (mu_i * (1.0 - e), mu_i * (1.0 + e));
    (a.min(b), a.max(b))
}

pub fn graybox_rhs(p: &GrayboxParams, z: &[f64; 8], u: &Input) -> Result<[f64; 8]> {
    let [x_uu, k, m_uq, m_q, bz_b, b, n_ur, c] = p.mu;
    let [k_du, k_dq, k_dr] = p.delay_gains;
    let [theta, _psi, su, q, r, duc, dqc, drc] = *z;
    let cos_theta = check_pitch(theta)?;
    let uu = su * su;
    Ok([
        q,
        r / cos_theta,
        x_uu * uu + k * duc,
        m_uq * su * q + m_q * q - bz_b * theta.sin() + b * uu * dqc,
        n_ur * su * r + c * uu * drc,
        k_du * (u.delta_u - duc),
        k_dq * (u.delta_q - dqc),
        k_dr * (u.delta_r - drc),
    ])
}

/// Vector-Jacobian products of [`graybox_rhs`]: returns `v^T df/dz` and
/// `v^T df/dmu`.
pub fn graybox_vjp(p: &GrayboxParams, z: &[f64; 8], v: &[f64; 8]) -> ([f64; 8], [f64; 8]) {
    let [x_uu, k, m_uq, m_q, bz_b, b, n_ur, c] = p.mu;
    let [k_du, k_dq, k_dr] = p.delay_gains;
    let [theta, _psi, su, q, r, duc, dqc, drc] = *z;
    let (sin_t, cos_t) = theta.sin_cos();
    let uu = su * su;
    let mut dz = [0.0; 8];
    dz[Output::Q] += v[0];
    dz[Output::R] += v[1] / cos_t;
    dz[Output::THETA] += v[1] * r * sin_t / (cos_t * cos_t);
    dz[Output::U] += v[2] * 2.0 * x_uu * su;
    dz[Output::DELTA_UC] += v[2] * k;
    dz[Output::U] += v[3] * (m_uq * q + 2.0 * b * su * dqc);
    dz[Output::Q] += v[3] * (m_uq * su + m_q);
    dz[Output::THETA] -= v[3] * bz_b * cos_t;
    dz[Output::DELTA_QC] += v[3] * b * uu;
    dz[Output::U] += v[4] * (n_ur * r + 2.0 * c * su * drc);
    dz[Output::R] += v[4] * n_ur * su;
    dz[Output::DELTA_RC] += v[4] * c * uu;
    dz[Output::DELTA_UC] -= v[5] * k_du;
    dz[Output::DELTA_QC] -= v[6] * k_dq;
    dz[Output::DELTA_RC] -= v[7] * k_dr;
    let dmu = [
        v[2] * uu,
        v[2] * duc,
        v[3] * su * q,
        v[3] * q,
        -v[3] * sin_t,
        v[3] * uu * dqc,
        v[4] * su * r,
        v[4] * uu * drc,
    ];
    (dz, dmu)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ModelVariant {
    Blackbox,
    ConstrainedBlackbox,
    Graybox,
    Hybrid(ParamErrorLevel),
}

impl ModelVariant {
    /// The six variants of the comparison, in report order.
    pub fn all() -> Vec<ModelVariant> {
        vec![
            ModelVariant::Blackbox,
            ModelVariant::ConstrainedBlackbox,
            ModelVariant::Hybrid(ParamErrorLevel(1.0)),
            ModelVariant::Hybrid(ParamErrorLevel(0.5)),
            ModelVariant::Hybrid(ParamErrorLevel(0.3)),
            ModelVariant::Graybox,
        ]
    }

    pub fn has_mlp(self) -> bool {
        !matches!(self, ModelVariant::Graybox)
    }

    pub fn has_graybox(self) -> bool {
        matches!(self, ModelVariant::Graybox | ModelVariant::Hybrid(_))
    }

    /// Only the constrained blackbox is trained with the boundary penalty.
    pub fn uses_penalty(self) -> bool {
        matches!(self, ModelVariant::ConstrainedBlackbox)
    }

    /// Filesystem-safe name.
    pub fn slug(self) -> String {
        self.to_string().replace(':', "_")
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelVariant::Blackbox => f.write_str("blackbox"),
            ModelVariant::ConstrainedBlackbox => f.write_str("cblackbox"),
            ModelVariant::Graybox => f.write_str("graybox"),
            ModelVariant::Hybrid(e) => write!(f, "hybrid:{e}"),
        }
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "blackbox" => Ok(ModelVariant::Blackbox),
            "cblackbox" => Ok(ModelVariant::ConstrainedBlackbox),
            "graybox" => Ok(ModelVariant::Graybox),
            _ => {
                let e = s
                    .strip_prefix("hybrid:")
                    .or_else(|| s.strip_prefix("hybrid_"))
                    .and_then(|e| e.parse::<f64>().ok())
                    .ok_or_else(|| {
                        Error::config(
                            "variant",
                            format!("unknown variant `{s}` (blackbox | cblackbox | graybox | hybrid:<e_mu>)"),
                        )
                    })?;
                Ok(ModelVariant::Hybrid(ParamErrorLevel::new(e)?))
            }
        }
    }
}

impl TryFrom<String> for ModelVariant {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ModelVariant> for String {
    fn from(v: ModelVariant) -> String {
        v.to_string()
    }
}

/// Box bounds on the output used for the boundary penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub lower: [f64; 8],
    pub upper: [f64; 8],
    pub penalty_weight: f64,
}

impl Default for ConstraintSpec {
    fn default() -> Self {
        let inf = f64::INFINITY;
        Self {
            lower: [-FRAC_PI_2, -inf, -inf, -inf, -inf, 0.0, -1.0, -1.0],
            upper: [FRAC_PI_2, inf, inf, inf, inf, 1.0, 1.0, 1.0],
            penalty_weight: 1.0,
        }
    }
}

impl ConstraintSpec {
    pub fn with_weight(penalty_weight: f64) -> Self {
        Self {
            penalty_weight,
            ..Self::default()
        }
    }
}

/// Per-coordinate distance outside `[lower, upper]`.
pub fn constraint_violation(z: &[f64; 8], spec: &ConstraintSpec) -> [f64; 8] {
    std::array::from_fn(|i| (spec.lower[i] - z[i]).max(0.0) + (z[i] - spec.upper[i]).max(0.0))
}

pub fn constraint_penalty(c: &[f64; 8]) -> f64 {
    c.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Subgradient of `||c(z)||_2` with respect to `z`; zero at the boundary and
/// wherever the violation vector vanishes.
pub fn constraint_penalty_grad(z: &[f64; 8], spec: &ConstraintSpec) -> [f64; 8] {
    let c = constraint_violation(z, spec);
    let norm = constraint_penalty(&c);
    if norm == 0.0 {
        return [0.0; 8];
    }
    std::array::from_fn(|i| {
        let dir = if z[i] < spec.lower[i] {
            -1.0
        } else if z[i] > spec.upper[i] {
            1.0
        } else {
            0.0
        };
        dir * c[i] / norm
    })
}

/// Fixed, untrained affine maps around the network:
/// `f = gain * net((x - shift) / scale)` with `x = (z, u)`.
///
/// The spectral bounds act on `net` alone, so the constrained network stays
/// 1-Lipschitz in standardized coordinates while the field can still reach
/// the fast actuator-lag rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpScaling {
    pub input_shift: [f64; 11],
    pub input_scale: [f64; 11],
    pub output_gain: [f64; 8],
}

impl Default for MlpScaling {
    fn default() -> Self {
        Self::identity()
    }
}

impl MlpScaling {
    pub fn identity() -> Self {
        Self {
            input_shift: [0.0; 11],
            input_scale: [1.0; 11],
            output_gain: [1.0; 8],
        }
    }

    /// Input mean/std over every sample; output gain is the RMS of the
    /// finite-difference derivative per channel (yaw wrapped). Degenerate
    /// channels fall back to 1.
    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        let mut n = 0usize;
        let mut sum = [0.0; 11];
        let mut sq = [0.0; 11];
        let mut m = 0usize;
        let mut dsq = [0.0; 8];
        for b in &ds.batches {
            for (k, (y, u)) in b.outputs.iter().zip(&b.inputs).enumerate() {
                let mut x = [0.0; 11];
                x[..8].copy_from_slice(&y.0);
                x[8..].copy_from_slice(&u.to_array());
                for i in 0..11 {
                    sum[i] += x[i];
                    sq[i] += x[i] * x[i];
                }
                n += 1;
                if let Some(next) = b.outputs.get(k + 1) {
                    let d = output_residual(&next.0, &y.0);
                    for c in 0..8 {
                        dsq[c] += (d[c] / ds.delta()).powi(2);
                    }
                    m += 1;
                }
            }
        }
        if n == 0 || m == 0 {
            return Err(Error::config("dataset", "no samples for network scaling"));
        }
        let fallback = |v: f64| if v > 1e-12 && v.is_finite() { v } else { 1.0 };
        let input_shift: [f64; 11] = std::array::from_fn(|i| sum[i] / n as f64);
        let input_scale =
            std::array::from_fn(|i| fallback((sq[i] / n as f64 - input_shift[i].powi(2)).max(0.0).sqrt()));
        let output_gain = std::array::from_fn(|c| fallback((dsq[c] / m as f64).sqrt()));
        Ok(Self {
            input_shift,
            input_scale,
            output_gain,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: &f64| v.is_finite() && *v > 0.0;
        if !self.input_shift.iter().all(|v| v.is_finite())
            || !self.input_scale.iter().all(ok)
            || !self.output_gain.iter().all(ok)
        {
            return Err(Error::config(
                "scaling",
                "shifts must be finite, scales and gains positive",
            ));
        }
        Ok(())
    }
}

/// A model variant with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainableModel {
    pub variant: ModelVariant,
    pub mlp: Option<Mlp>,
    pub graybox: Option<GrayboxParams>,
    pub bounds: Option<SpectralBounds>,
    #[serde(default)]
    pub scaling: MlpScaling,
}

impl TrainableModel {
    pub fn new(
        variant: ModelVariant,
        mlp: Option<Mlp>,
        graybox: Option<GrayboxParams>,
        bounds: Option<SpectralBounds>,
    ) -> Result<Self> {
        let m = Self {
            variant,
            mlp,
            graybox,
            bounds,
            scaling: MlpScaling::identity(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.variant.has_mlp() != self.mlp.is_some() {
            return Err(Error::Shape(format!("variant {} MLP presence mismatch", self.variant)));
        }
        if self.variant.has_graybox() != self.graybox.is_some() {
            return Err(Error::Shape(format!(
                "variant {} graybox presence mismatch",
                self.variant
            )));
        }
        if let Some(mlp) = &self.mlp {
            if mlp.input_dim() != Output::DIM + Input::DIM || mlp.output_dim() != Output::DIM {
                return Err(Error::Shape(format!("MLP dims {:?} must map 11 -> 8", mlp.dims())));
            }
        }
        if let Some(b) = &self.bounds {
            b.validate()?;
        }
        self.scaling.validate()
    }

    pub fn with_scaling(mut self, scaling: MlpScaling) -> Result<Self> {
        scaling.validate()?;
        self.scaling = scaling;
        Ok(self)
    }

    /// Length of the per-step scratch cache used by [`Self::rhs_cached`].
    pub fn cache_len(&self) -> usize {
        self.mlp.as_ref().map_or(0, Mlp::cache_len)
    }

    pub fn rhs(&self, z: &[f64; 8], u: &Input) -> Result<[f64; 8]> {
        let mut cache = vec![0.0; self.cache_len()];
        self.rhs_cached(z, u, &mut cache)
    }

    /// Evaluates the field, keeping MLP activations in `cache` for [`Self::rhs_vjp`].
    pub fn rhs_cached(&self, z: &[f64; 8], u: &Input, cache: &mut [f64]) -> Result<[f64; 8]> {
        let mut out = match &self.graybox {
            Some(g) => graybox_rhs(g, z, u)?,
            None => [0.0; 8],
        };
        if let Some(mlp) = &self.mlp {
            let sc = &self.scaling;
            let mut x = [0.0; 11];
            x[..8].copy_from_slice(z);
            x[8..].copy_from_slice(&u.to_array());
            for i in 0..11 {
                x[i] = (x[i] - sc.input_shift[i]) / sc.input_scale[i];
            }
            let y = mlp.forward(&x, cache);
            for c in 0..8 {
                out[c] += sc.output_gain[c] * y[c];
            }
        }
        Ok(out)
    }

    /// Returns `v^T df/dz` and accumulates `v^T df/d(trainable)` into `grads`.
    pub fn rhs_vjp(&self, z: &[f64; 8], cache: &[f64], v: &[f64; 8], grads: &mut [f64]) -> [f64; 8] {
        let mut dz = [0.0; 8];
        if let Some(g) = &self.graybox {
            let (gz, gmu) = graybox_vjp(g, z, v);
            dz = gz;
            if self.variant == ModelVariant::Graybox {
                for (a, b) in grads.iter_mut().zip(gmu) {
                    *a += b;
                }
            }
        }
        if let Some(mlp) = &self.mlp {
            let sc = &self.scaling;
            let vg: [f64; 8] = std::array::from_fn(|c| v[c] * sc.output_gain[c]);
            let mut dx = [0.0; 11];
            mlp.backward(cache, &vg, grads, &mut dx);
            for i in 0..8 {
                dz[i] += dx[i] / sc.input_scale[i];
            }
        }
        dz
    }

    pub fn n_trainable(&self) -> usize {
        match self.variant {
            ModelVariant::Graybox => 8,
            _ => self.mlp.as_ref().map_or(0, Mlp::n_params),
        }
    }

    /// Mutable view of the trainable parameters; hybrid coefficients are never exposed.
    pub fn trainable_mut(&mut self) -> &mut [f64] {
        match self.variant {
            ModelVariant::Graybox => &mut self.graybox.as_mut().expect("validated").mu,
            _ => self.mlp.as_mut().expect("validated").params_mut(),
        }
    }

    pub fn trainable(&self) -> &[f64] {
        match self.variant {
            ModelVariant::Graybox => &self.graybox.as_ref().expect("validated").mu,
            _ => self.mlp.as_ref().expect("validated").params(),
        }
    }

    /// Applies the spectral projection when the model carries bounds.
    pub fn project(&mut self) -> Result<()> {
        if let (Some(mlp), Some(b)) = (self.mlp.as_mut(), self.bounds.as_ref()) {
            project_spectrum(mlp, b)?;
        }
        Ok(())
    }
}
