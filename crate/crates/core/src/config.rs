//! Application configuration: one TOML file with `[dataset]`, `[train]`,
//! `[test]` and optionally `[truth_params]` sections. Unknown keys are errors.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evaluate::TestSetConfig;
use crate::excitation::DatasetConfig;
use crate::io::{read_string, read_truth_params};
use crate::models::ModelVariant;
use crate::plant::TruthParams;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AppConfig {
    /// Master seed; the dataset, test set and model initializations all derive from it.
    pub seed: u64,
    /// Truth parameter file, resolved relative to the config file.
    pub params_file: Option<PathBuf>,
    pub truth_params: Option<TruthParams>,
    pub variants: Vec<ModelVariant>,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub test: TestSetConfig,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            params_file: None,
            truth_params: None,
            variants: ModelVariant::all(),
            dataset: DatasetConfig::default(),
            train: TrainConfig::default(),
            test: TestSetConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Curriculum `[50, 100, 200]`, 3 seeds, 50 epochs, 1000-step test rollouts.
    Small,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small" => Ok(Preset::Small),
            _ => Err(Error::config(
                "preset",
                format!("unknown preset `{s}` (expected `small`)"),
            )),
        }
    }
}

impl AppConfig {
    pub fn from_toml_str(s: &str, origin: &Path) -> Result<Self> {
        let mut cfg: AppConfig =
            toml::from_str(s).map_err(|e| Error::config(origin.display().to_string(), e.to_string()))?;
        if let (Some(p), Some(dir)) = (&cfg.params_file, origin.parent()) {
            if p.is_relative() {
                cfg.params_file = Some(dir.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&read_string(path)?, path)
    }

    pub fn apply_preset(&mut self, preset: Preset) {
        match preset {
            Preset::Small => {
                self.dataset.schedule = vec![50, 100, 200];
                self.train.seeds = 3;
                self.train.epochs = 50;
                self.test.steps = 1000;
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.train.validate()?;
        crate::train::validate_schedule(&self.dataset.schedule)?;
        if self.variants.is_empty() {
            return Err(Error::config("variants", "must not be empty"));
        }
        if self.test.steps == 0 || self.test.n_inputs == 0 || self.test.n_initial == 0 {
            return Err(Error::config("test", "steps, n_inputs and n_initial must be positive"));
        }
        if self.params_file.is_some() && self.truth_params.is_some() {
            return Err(Error::config(
                "truth_params",
                "give either params_file or [truth_params], not both",
            ));
        }
        if let Some(p) = &self.truth_params {
            p.validate()?;
        }
        Ok(())
    }

    /// Truth parameters from the inline section, the referenced file or the
    /// built-in defaults, in that order.
    pub fn resolve_truth(&self) -> Result<TruthParams> {
        match (&self.truth_params, &self.params_file) {
            (Some(p), _) => Ok(*p),
            (None, Some(path)) => read_truth_params(path),
            (None, None) => Ok(TruthParams::default()),
        }
    }

    /// Dataset settings with the master seed applied.
    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            seed: self.seed,
            ..self.dataset.clone()
        }
    }

    /// SHA-256 over everything that affects results.
    pub fn hash(&self, truth: &TruthParams) -> String {
        #[derive(Serialize)]
        struct Hashed<'a> {
            seed: u64,
            truth: &'a TruthParams,
            variants: &'a [ModelVariant],
            dataset: &'a DatasetConfig,
            train: &'a TrainConfig,
            test: &'a TestSetConfig,
        }
        let json = serde_json::to_vec(&Hashed {
            seed: self.seed,
            truth,
            variants: &self.variants,
            dataset: &self.dataset,
            train: &self.train,
            test: &self.test,
        })
        .expect("config serializes");
        hex_digest(&json)
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the training settings alone, stamped into checkpoints.
pub fn train_hash(cfg: &TrainConfig, dataset_seed: u64, truth: &TruthParams) -> String {
    let json = serde_json::to_vec(&(cfg, dataset_seed, truth)).expect("config serializes");
    hex_digest(&json)
}
