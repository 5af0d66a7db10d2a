//! Domain-aware neural ODE system identification for a torpedo-style AUV.
//!
//! The crate is organised as a pipeline:
//!
//! - [`plant`]: ground-truth 12-state vehicle dynamics, RK4 integration and the
//!   8-channel output map.
//! - [`excitation`]: randomized input trajectories, initial conditions and
//!   curriculum datasets.
//! - [`ndiff`]: dense networks with hand-written reverse mode, Adam-W,
//!   singular-value projection and backpropagation through Euler rollouts.
//! - [`models`]: the six model variants (blackbox, constrained blackbox,
//!   graybox and three hybrids), boundary constraints and penalties.
//! - [`train`]: curriculum training and the seed grid.
//! - [`evaluate`]: held-out test set, normalized MSE, IQR aggregation and
//!   report artifacts.
//! - [`pipeline`]: configuration, persistence layout and stage orchestration
//!   used by the command-line front end.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod excitation;
pub mod io;
pub mod models;
pub mod ndiff;
pub mod pipeline;
pub mod plant;
pub mod seed;
pub mod train;

pub use error::{Error, Result};
pub use excitation::{Dataset, ExcitationConfig, InputTrajectory, NormStats, Trajectory};
pub use models::{ConstraintSpec, GrayboxParams, ModelVariant, ParamErrorLevel, TrainableModel};
pub use ndiff::{AdamWState, Mlp, SpectralBounds};
pub use plant::{Input, Output, PlantState, TruthParams};
pub use train::{TrainConfig, TrainRun};
