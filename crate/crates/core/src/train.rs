//! Curriculum training of the model variants.
//!
//! Each curriculum batch is one trajectory; batch horizons double. Within a
//! batch every epoch is one full-trajectory BPTT gradient, clipped, applied
//! with Adam-W and followed by the spectral projection where the variant
//! carries bounds. Parameters carry over between batches and the learning
//! rate is scaled by `lr_decay` at each new batch.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::excitation::Dataset;
use crate::models::{sample_offset_params, ConstraintSpec, MlpScaling, ModelVariant, ParamErrorLevel, TrainableModel};
use crate::ndiff::{
    bptt_trajectory_grad, clip_global_norm, Activation, AdamWConfig, AdamWState, LossSpec, Mlp, SpectralBounds,
};
use crate::plant::{Input, Output, TruthParams};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Epochs per curriculum batch.
    pub epochs: usize,
    /// Stop a batch after this many epochs without improvement; 0 disables.
    pub patience: usize,
    pub hidden: Vec<usize>,
    /// Optimizer settings for the MLP-based variants.
    pub optimizer: AdamWConfig,
    /// Initial learning rate for the graybox coefficients.
    pub graybox_lr: f64,
    pub graybox_weight_decay: f64,
    /// Epochs per batch for the graybox. Its 8 coefficients are cheap to
    /// train but the (M_uq, M_q) direction is poorly conditioned.
    pub graybox_epochs: usize,
    /// Early stopping for the graybox; 0 disables. Progress along the
    /// ill-conditioned direction is too slow for a short patience window.
    pub graybox_patience: usize,
    /// Learning-rate factor applied at each new curriculum batch; 1 keeps it constant.
    pub lr_decay: f64,
    pub grad_clip: f64,
    pub penalty_weight: f64,
    pub cblackbox_bounds: SpectralBounds,
    pub hybrid_bounds: SpectralBounds,
    /// Independently initialized instances per variant.
    pub seeds: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            patience: 30,
            hidden: vec![128; 4],
            optimizer: AdamWConfig::default(),
            graybox_lr: 0.02,
            graybox_weight_decay: 0.0,
            graybox_epochs: 2000,
            graybox_patience: 0,
            lr_decay: 1.0,
            grad_clip: 10.0,
            penalty_weight: 1.0,
            cblackbox_bounds: SpectralBounds {
                sigma_min: 0.5,
                sigma_max: 1.0,
            },
            hybrid_bounds: SpectralBounds {
                sigma_min: 0.0,
                sigma_max: 1.0,
            },
            seeds: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config("hidden", "need at least one nonzero hidden layer"));
        }
        for (key, v) in [
            ("optimizer.lr", self.optimizer.lr),
            ("graybox_lr", self.graybox_lr),
            ("lr_decay", self.lr_decay),
            ("grad_clip", self.grad_clip),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if !(self.penalty_weight >= 0.0) {
            return Err(Error::config("penalty_weight", "must be nonnegative"));
        }
        self.cblackbox_bounds.validate()?;
        self.hybrid_bounds.validate()?;
        if self.seeds == 0 {
            return Err(Error::config("seeds", "must be positive"));
        }
        Ok(())
    }

    pub fn mlp_dims(&self) -> Vec<usize> {
        let mut dims = vec![Output::DIM + Input::DIM];
        dims.extend(&self.hidden);
        dims.push(Output::DIM);
        dims
    }

    fn epochs_for(&self, variant: ModelVariant) -> usize {
        if variant == ModelVariant::Graybox {
            self.graybox_epochs
        } else {
            self.epochs
        }
    }

    fn patience_for(&self, variant: ModelVariant) -> usize {
        if variant == ModelVariant::Graybox {
            self.graybox_patience
        } else {
            self.patience
        }
    }

    fn optimizer_for(&self, variant: ModelVariant) -> AdamWConfig {
        match variant {
            ModelVariant::Graybox => AdamWConfig {
                lr: self.graybox_lr,
                weight_decay: self.graybox_weight_decay,
                ..self.optimizer
            },
            _ => self.optimizer,
        }
    }
}

/// Curriculum horizons must double from batch to batch.
pub fn validate_schedule(lengths: &[usize]) -> Result<()> {
    if lengths.is_empty() {
        return Err(Error::config("schedule", "must not be empty"));
    }
    if let Some(w) = lengths.windows(2).find(|w| w[1] != 2 * w[0]) {
        return Err(Error::config(
            "schedule",
            format!("horizons must double between batches, found {} -> {}", w[0], w[1]),
        ));
    }
    Ok(())
}

/// Seed-derived initial model for instance `instance` of `variant`.
///
/// Instances with the same index share their RNG streams across variants:
/// the plain and constrained blackboxes start from the same draw, and the
/// three hybrids use offsets that scale with `e_mu`.
pub fn initialize_model(
    variant: ModelVariant,
    truth: &TruthParams,
    cfg: &TrainConfig,
    master_seed: u64,
    instance: usize,
    scaling: MlpScaling,
) -> Result<TrainableModel> {
    let j = instance as u64;
    let dims = cfg.mlp_dims();
    let init_mlp = || Mlp::init_uniform(&dims, Activation::Tanh, &mut seed::rng(master_seed, "mlp-init", j));
    let mut model = match variant {
        ModelVariant::Blackbox => TrainableModel::new(variant, Some(init_mlp()?), None, None)?,
        ModelVariant::ConstrainedBlackbox => {
            TrainableModel::new(variant, Some(init_mlp()?), None, Some(cfg.cblackbox_bounds))?
        }
        ModelVariant::Graybox => {
            let mut rng = seed::rng(master_seed, "graybox-init", j);
            let g = sample_offset_params(truth, ParamErrorLevel::new(1.0)?, &mut rng);
            TrainableModel::new(variant, None, Some(g), None)?
        }
        ModelVariant::Hybrid(e) => {
            let mut rng = seed::rng(master_seed, "hybrid-offset", j);
            let g = sample_offset_params(truth, e, &mut rng);
            let mut mlp = init_mlp()?;
            // Residual network starts as the zero map.
            let last = mlp.n_layers() - 1;
            let (w, b) = mlp.layer_mut(last);
            w.iter_mut().chain(b.iter_mut()).for_each(|v| *v = 0.0);
            TrainableModel::new(variant, Some(mlp), Some(g), Some(cfg.hybrid_bounds))?
        }
    };
    model.project()?;
    model.with_scaling(scaling)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub batch: usize,
    pub epoch: usize,
    pub loss: f64,
    pub penalty: f64,
    pub grad_norm: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RunStatus {
    Completed,
    Diverged {
        batch: usize,
        epoch: usize,
        message: String,
    },
    Failed {
        message: String,
    },
}

impl RunStatus {
    pub fn is_completed(&self) -> bool {
        matches!(self, RunStatus::Completed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub variant: ModelVariant,
    pub instance: usize,
    pub master_seed: u64,
    pub history: Vec<EpochRecord>,
    pub status: RunStatus,
    pub model: TrainableModel,
    pub optimizer: Option<AdamWState>,
    pub wall_ms: f64,
}

/// Snapshot passed to an observer after every optimizer step.
pub struct StepEvent<'a> {
    pub variant: ModelVariant,
    pub instance: usize,
    pub batch: usize,
    pub epoch: usize,
    pub model: &'a TrainableModel,
}

pub type Observer<'a> = &'a (dyn Fn(&StepEvent<'_>) + Sync);

fn no_observer(_: &StepEvent<'_>) {}

/// Trains an initialized model through the dataset's curriculum.
pub fn fit(
    mut model: TrainableModel,
    instance: usize,
    master_seed: u64,
    dataset: &Dataset,
    cfg: &TrainConfig,
    observer: Observer<'_>,
) -> Result<TrainRun> {
    cfg.validate()?;
    validate_schedule(&dataset.lengths())?;
    let started = Instant::now();
    let variant = model.variant;
    let opt_cfg = cfg.optimizer_for(variant);
    let mut opt = AdamWState::new(opt_cfg, model.n_trainable());
    let spec = LossSpec {
        penalty: variant
            .uses_penalty()
            .then(|| ConstraintSpec::with_weight(cfg.penalty_weight)),
    };
    let mut grads = vec![0.0; model.n_trainable()];
    let mut history = Vec::new();
    let mut status = RunStatus::Completed;

    'batches: for (b, traj) in dataset.batches.iter().enumerate() {
        opt.set_lr(opt_cfg.lr * cfg.lr_decay.powi(b as i32));
        let z0 = traj.outputs[0].0;
        let mut best_loss = f64::INFINITY;
        let mut best = model.trainable().to_vec();
        let mut stale = 0usize;
        for epoch in 0..cfg.epochs_for(variant) {
            let t0 = Instant::now();
            let loss = bptt_trajectory_grad(
                &model,
                &z0,
                &traj.inputs,
                &traj.outputs,
                dataset.delta(),
                &spec,
                &mut grads,
            );
            let loss = match loss {
                Ok(l) if l.loss.is_finite() => l,
                Ok(l) => {
                    status = RunStatus::Diverged {
                        batch: b,
                        epoch,
                        message: format!("non-finite loss {}", l.loss),
                    };
                    break 'batches;
                }
                Err(e @ (Error::Diverged { .. } | Error::Singularity { .. })) => {
                    status = RunStatus::Diverged {
                        batch: b,
                        epoch,
                        message: e.to_string(),
                    };
                    break 'batches;
                }
                Err(e) => return Err(e),
            };
            if loss.loss < best_loss {
                best_loss = loss.loss;
                best.copy_from_slice(model.trainable());
                stale = 0;
            } else {
                stale += 1;
            }
            let grad_norm = clip_global_norm(&mut grads, cfg.grad_clip);
            opt.step(model.trainable_mut(), &grads)?;
            if let Err(e) = model.project() {
                status = RunStatus::Failed { message: e.to_string() };
                break 'batches;
            }
            observer(&StepEvent {
                variant,
                instance,
                batch: b,
                epoch,
                model: &model,
            });
            history.push(EpochRecord {
                batch: b,
                epoch,
                loss: loss.loss,
                penalty: loss.penalty,
                grad_norm,
                wall_ms: t0.elapsed().as_secs_f64() * 1e3,
            });
            if cfg.patience_for(variant) > 0 && stale >= cfg.patience_for(variant) {
                break;
            }
        }
        if best_loss.is_finite() {
            model.trainable_mut().copy_from_slice(&best);
        }
    }

    Ok(TrainRun {
        variant,
        instance,
        master_seed,
        history,
        status,
        model,
        optimizer: Some(opt),
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

/// Initializes and trains instance `instance` of `variant`.
pub fn train_model(
    variant: ModelVariant,
    dataset: &Dataset,
    truth: &TruthParams,
    cfg: &TrainConfig,
    master_seed: u64,
    instance: usize,
) -> Result<TrainRun> {
    train_model_observed(variant, dataset, truth, cfg, master_seed, instance, &no_observer)
}

pub fn train_model_observed(
    variant: ModelVariant,
    dataset: &Dataset,
    truth: &TruthParams,
    cfg: &TrainConfig,
    master_seed: u64,
    instance: usize,
    observer: Observer<'_>,
) -> Result<TrainRun> {
    let model = initialize_model(
        variant,
        truth,
        cfg,
        master_seed,
        instance,
        MlpScaling::from_dataset(dataset)?,
    )?;
    fit(model, instance, master_seed, dataset, cfg, observer)
}

/// Trains `cfg.seeds` instances of every variant in parallel.
///
/// Results come back in (variant, instance) order. A run that errors outside
/// the divergence path is recorded as failed and the grid continues.
pub fn run_experiment_grid(
    variants: &[ModelVariant],
    dataset: &Dataset,
    truth: &TruthParams,
    cfg: &TrainConfig,
    master_seed: u64,
    observer: Observer<'_>,
) -> Result<Vec<TrainRun>> {
    cfg.validate()?;
    validate_schedule(&dataset.lengths())?;
    let scaling = MlpScaling::from_dataset(dataset)?;
    let jobs: Vec<(ModelVariant, usize)> = variants
        .iter()
        .flat_map(|&v| (0..cfg.seeds).map(move |j| (v, j)))
        .collect();
    jobs.par_iter()
        .map(|&(v, j)| {
            let init = initialize_model(v, truth, cfg, master_seed, j, scaling)?;
            match fit(init.clone(), j, master_seed, dataset, cfg, observer) {
                Ok(run) => Ok(run),
                Err(e) => Ok(TrainRun {
                    variant: v,
                    instance: j,
                    master_seed,
                    history: Vec::new(),
                    status: RunStatus::Failed { message: e.to_string() },
                    model: init,
                    optimizer: None,
                    wall_ms: 0.0,
                }),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::excitation::{build_dataset, DatasetConfig};

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 0,
            graybox_epochs: 0,
            hidden: vec![8, 8],
            seeds: 2,
            ..Default::default()
        }
    }

    #[test]
    fn schedule_must_double() {
        validate_schedule(&[100, 200, 400]).unwrap();
        validate_schedule(&[50]).unwrap();
        assert!(validate_schedule(&[100, 300]).is_err());
        assert!(validate_schedule(&[]).is_err());
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let truth = TruthParams::default();
        let ds = build_dataset(
            &truth,
            &DatasetConfig {
                schedule: vec![50],
                ..Default::default()
            },
        )
        .unwrap();
        let cfg = tiny_cfg();
        for v in ModelVariant::all() {
            let init = initialize_model(v, &truth, &cfg, 11, 0, MlpScaling::from_dataset(&ds).unwrap()).unwrap();
            let run = train_model(v, &ds, &truth, &cfg, 11, 0).unwrap();
            assert_eq!(run.model, init);
            assert!(run.history.is_empty());
        }
    }

    #[test]
    fn hybrid_output_layer_starts_at_zero() {
        let truth = TruthParams::default();
        let m = initialize_model(
            ModelVariant::Hybrid(ParamErrorLevel::new(0.5).unwrap()),
            &truth,
            &tiny_cfg(),
            3,
            1,
            MlpScaling::identity(),
        )
        .unwrap();
        let mlp = m.mlp.as_ref().unwrap();
        let (w, b) = mlp.layer(mlp.n_layers() - 1);
        assert!(w.iter().chain(b).all(|&v| v == 0.0));
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = TrainConfig {
            graybox_lr: 0.0,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config { key, .. }) if key == "graybox_lr"));
    }
}
