//! Dense networks and the reverse-mode machinery the training loop needs.

mod adamw;
pub mod bptt;
mod mlp;
mod spectral;

pub use adamw::{AdamWConfig, AdamWState};
pub use bptt::{bptt_trajectory_grad, rollout_loss, LossBreakdown, LossSpec};
pub use mlp::{Activation, Mlp};
pub use spectral::{project_matrix, project_spectrum, singular_values, SpectralBounds};

/// Euclidean norm of a flat gradient vector.
pub fn global_norm(g: &[f64]) -> f64 {
    g.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Rescales `g` in place so its global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(g: &mut [f64], max_norm: f64) -> f64 {
    let n = global_norm(g);
    if n > max_norm && n > 0.0 {
        let s = max_norm / n;
        g.iter_mut().for_each(|v| *v *= s);
    }
    n
}
