//! Loss and exact gradients through an explicit-Euler rollout.
//!
//! The rollout `z_{k+1} = z_k + delta f(z_k, u_k)` starts at the measured
//! output and is scored on the `N` predicted samples:
//!
//! `L = 1/N sum_{k=1..N} ( ||y_k - z_k||^2 + w ||c(z_k)||_2 )`
//!
//! with the yaw residual wrapped onto the circle. Gradients are those of the
//! discretized system (discretize-then-differentiate).

use crate::error::{Error, Result};
use crate::models::{
    constraint_penalty, constraint_penalty_grad, constraint_violation, ConstraintSpec, TrainableModel,
};
use crate::plant::{wrap_angle, Input, Output};

/// Any state coordinate beyond this magnitude marks the rollout as diverged.
pub const DIVERGENCE_BOUND: f64 = 1e6;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossSpec {
    /// Boundary penalty; `None` disables it.
    pub penalty: Option<ConstraintSpec>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub loss: f64,
    pub mse: f64,
    pub penalty: f64,
}

/// `y - z` with the yaw component wrapped to `(-pi, pi]`.
pub fn output_residual(y: &[f64; 8], z: &[f64; 8]) -> [f64; 8] {
    let mut d: [f64; 8] = std::array::from_fn(|i| y[i] - z[i]);
    d[Output::PSI] = wrap_angle(d[Output::PSI]);
    d
}

fn check_state(z: &[f64; 8], step: usize) -> Result<()> {
    let magnitude = z
        .iter()
        .fold(0.0f64, |m, v| if v.is_nan() { f64::INFINITY } else { m.max(v.abs()) });
    if magnitude > DIVERGENCE_BOUND {
        return Err(Error::Diverged { step, magnitude });
    }
    Ok(())
}

fn validate(inputs: &[Input], targets: &[Output], delta: f64) -> Result<usize> {
    if targets.len() < 2 {
        return Err(Error::Shape("need at least two target samples".into()));
    }
    let n = targets.len() - 1;
    if inputs.len() < n {
        return Err(Error::Shape(format!("{} inputs for {n} steps", inputs.len())));
    }
    if !(delta > 0.0) {
        return Err(Error::config("delta", "must be positive"));
    }
    Ok(n)
}

fn step_terms(y: &Output, z: &[f64; 8], spec: &LossSpec) -> (f64, f64) {
    let d = output_residual(&y.0, z);
    let mse = d.iter().map(|v| v * v).sum();
    let pen = spec.penalty.map_or(0.0, |c| {
        c.penalty_weight * constraint_penalty(&constraint_violation(z, &c))
    });
    (mse, pen)
}

/// Forward-only loss of the rollout from `z0` against `targets[1..]`.
pub fn rollout_loss(
    model: &TrainableModel,
    z0: &[f64; 8],
    inputs: &[Input],
    targets: &[Output],
    delta: f64,
    spec: &LossSpec,
) -> Result<LossBreakdown> {
    let n = validate(inputs, targets, delta)?;
    let mut cache = vec![0.0; model.cache_len()];
    let mut z = *z0;
    let (mut mse, mut pen) = (0.0, 0.0);
    for k in 0..n {
        let f = model.rhs_cached(&z, &inputs[k], &mut cache)?;
        for i in 0..8 {
            z[i] += delta * f[i];
        }
        check_state(&z, k + 1)?;
        let (m, p) = step_terms(&targets[k + 1], &z, spec);
        mse += m;
        pen += p;
    }
    let nf = n as f64;
    Ok(LossBreakdown {
        loss: (mse + pen) / nf,
        mse: mse / nf,
        penalty: pen / nf,
    })
}

/// Loss and its gradient with respect to the model's trainable parameters.
///
/// `grads` must have [`TrainableModel::n_trainable`] entries; it is
/// overwritten.
pub fn bptt_trajectory_grad(
    model: &TrainableModel,
    z0: &[f64; 8],
    inputs: &[Input],
    targets: &[Output],
    delta: f64,
    spec: &LossSpec,
    grads: &mut [f64],
) -> Result<LossBreakdown> {
    let n = validate(inputs, targets, delta)?;
    if grads.len() != model.n_trainable() {
        return Err(Error::Shape(format!(
            "gradient buffer has {} entries, model has {} trainable parameters",
            grads.len(),
            model.n_trainable()
        )));
    }
    grads.iter_mut().for_each(|g| *g = 0.0);

    let cl = model.cache_len();
    let mut caches = vec![0.0; n * cl];
    let mut zs = Vec::with_capacity(n + 1);
    zs.push(*z0);
    let (mut mse, mut pen) = (0.0, 0.0);
    for k in 0..n {
        let z = zs[k];
        let f = model.rhs_cached(&z, &inputs[k], &mut caches[k * cl..(k + 1) * cl])?;
        let next: [f64; 8] = std::array::from_fn(|i| z[i] + delta * f[i]);
        check_state(&next, k + 1)?;
        let (m, p) = step_terms(&targets[k + 1], &next, spec);
        mse += m;
        pen += p;
        zs.push(next);
    }
    let nf = n as f64;

    let mut lambda = [0.0; 8];
    for k in (1..=n).rev() {
        let z = &zs[k];
        let d = output_residual(&targets[k].0, z);
        for i in 0..8 {
            lambda[i] -= 2.0 * d[i] / nf;
        }
        if let Some(c) = spec.penalty {
            let g = constraint_penalty_grad(z, &c);
            for i in 0..8 {
                lambda[i] += c.penalty_weight * g[i] / nf;
            }
        }
        let v: [f64; 8] = std::array::from_fn(|i| delta * lambda[i]);
        let dz = model.rhs_vjp(&zs[k - 1], &caches[(k - 1) * cl..k * cl], &v, grads);
        for i in 0..8 {
            lambda[i] += dz[i];
        }
    }

    Ok(LossBreakdown {
        loss: (mse + pen) / nf,
        mse: mse / nf,
        penalty: pen / nf,
    })
}
