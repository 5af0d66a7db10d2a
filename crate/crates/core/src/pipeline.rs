//! Stage orchestration and the run-directory layout.
//!
//! ```text
//! <run>/manifest.toml
//! <run>/config.toml                      resolved configuration
//! <run>/dataset/train/                   batch_<i>.csv, meta, truth_params.toml
//! <run>/runs/<variant>/seed_<j>/         checkpoint.bin, run.log
//! <run>/test/                            traj_<k>.csv, meta
//! <run>/eval/                            summary.csv, summary.txt, report.json, ...
//! ```

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::{train_hash, AppConfig};
use crate::error::{Error, Result};
use crate::evaluate::{
    build_test_set, emit_artifacts, evaluate_models, summary_csv, summary_text, EvalReport, TestSet, TestSetConfig,
};
use crate::excitation::{build_dataset, Dataset, DatasetConfig};
use crate::io::{
    read_dataset, read_string, read_test_set, read_truth_params, run_log, write_atomic, write_dataset, write_test_set,
    META_FILE, TRUTH_FILE,
};
use crate::models::{MlpScaling, ModelVariant};
use crate::plant::TruthParams;
use crate::seed;
use crate::train::{fit, initialize_model, TrainConfig};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const RUN_LOG_FILE: &str = "run.log";
pub const MANIFEST_FILE: &str = "manifest.toml";

/// Test set seed derived from the dataset seed.
pub fn test_seed(dataset_seed: u64) -> u64 {
    seed::derive(dataset_seed, "test-set", 0)
}

pub fn gen_data(cfg: &DatasetConfig, truth: &TruthParams, out: &Path) -> Result<Dataset> {
    let ds = build_dataset(truth, cfg)?;
    write_dataset(out, &ds, truth)?;
    log::info!("wrote {} batches to {}", ds.batches.len(), out.display());
    Ok(ds)
}

pub fn run_dir(root: &Path, variant: ModelVariant, instance: usize) -> PathBuf {
    root.join(variant.slug()).join(format!("seed_{instance}"))
}

/// Trains every (variant, instance) pair and writes checkpoints and logs.
///
/// A run whose checkpoint already exists with the same training hash is
/// loaded instead of retrained.
pub fn train_stage(
    variants: &[ModelVariant],
    dataset: &Dataset,
    truth: &TruthParams,
    cfg: &TrainConfig,
    master_seed: u64,
    out: &Path,
) -> Result<Vec<Checkpoint>> {
    cfg.validate()?;
    let hash = train_hash(cfg, dataset.config.seed, truth);
    let scaling = MlpScaling::from_dataset(dataset)?;
    let jobs: Vec<(ModelVariant, usize)> = variants
        .iter()
        .flat_map(|&v| (0..cfg.seeds).map(move |j| (v, j)))
        .collect();
    jobs.par_iter()
        .map(|&(v, j)| {
            let dir = run_dir(out, v, j);
            let ck_path = dir.join(CHECKPOINT_FILE);
            if let Ok(ck) = Checkpoint::load(&ck_path) {
                if ck.header.config_hash == hash {
                    log::info!("{v} seed {j}: reusing {}", ck_path.display());
                    return Ok(ck);
                }
            }
            let init = initialize_model(v, truth, cfg, master_seed, j, scaling)?;
            let run = fit(init, j, master_seed, dataset, cfg, &|_| {})?;
            write_atomic(&dir.join(RUN_LOG_FILE), run_log(&run.history).as_bytes())?;
            let ck = Checkpoint::from_run(&run, &hash);
            ck.save(&ck_path)?;
            log::info!(
                "{v} seed {j}: {:?} after {} epochs ({:.0} ms)",
                run.status,
                run.history.len(),
                run.wall_ms
            );
            Ok(ck)
        })
        .collect()
}

/// Loads every `checkpoint.bin` below `runs`, in report order.
pub fn load_runs(runs: &Path) -> Result<Vec<Checkpoint>> {
    let mut out = Vec::new();
    let entries = std::fs::read_dir(runs).map_err(|e| Error::io(runs, e))?;
    for variant_dir in entries {
        let variant_dir = variant_dir.map_err(|e| Error::io(runs, e))?.path();
        if !variant_dir.is_dir() {
            continue;
        }
        for seed_dir in std::fs::read_dir(&variant_dir).map_err(|e| Error::io(&variant_dir, e))? {
            let p = seed_dir
                .map_err(|e| Error::io(&variant_dir, e))?
                .path()
                .join(CHECKPOINT_FILE);
            if p.is_file() {
                out.push(Checkpoint::load(&p)?);
            }
        }
    }
    if out.is_empty() {
        return Err(Error::config(
            "runs",
            format!("no checkpoints under {}", runs.display()),
        ));
    }
    let order = ModelVariant::all();
    let rank = |v: ModelVariant| order.iter().position(|&o| o == v).unwrap_or(usize::MAX);
    out.sort_by_key(|c| (rank(c.header.variant), c.header.instance));
    Ok(out)
}

/// Loads the test set in `test`, building and writing it first if absent.
pub fn ensure_test_set(test: &Path, dataset: &Dataset, truth: &TruthParams, cfg: &TestSetConfig) -> Result<TestSet> {
    if test.join(META_FILE).is_file() {
        let t = read_test_set(test)?;
        if t.config == *cfg && t.delta == dataset.delta() {
            return Ok(t);
        }
        log::warn!(
            "test set in {} does not match the requested settings; rebuilding",
            test.display()
        );
    }
    let t = build_test_set(truth, &dataset.config, cfg, test_seed(dataset.config.seed))?;
    write_test_set(test, &t)?;
    Ok(t)
}

/// Evaluates all checkpoints on the test set and writes the artifacts.
pub fn eval_stage(
    runs: &Path,
    test: &Path,
    dataset_dir: &Path,
    test_cfg: &TestSetConfig,
    out: &Path,
) -> Result<EvalReport> {
    let dataset = read_dataset(dataset_dir)?;
    let truth = read_truth_params(&dataset_dir.join(TRUTH_FILE))?;
    let test_set = ensure_test_set(test, &dataset, &truth, test_cfg)?;
    let models: Vec<_> = load_runs(runs)?
        .into_iter()
        .map(|c| (c.model, c.header.instance))
        .collect();
    let report = evaluate_models(&models, &test_set, &dataset.stats)?;
    emit_artifacts(&report, &models, &test_set, &dataset.stats, out)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Txt,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "txt" => Ok(Self::Txt),
            _ => Err(Error::config("format", format!("expected csv or txt, got `{s}`"))),
        }
    }
}

pub fn load_report(eval: &Path) -> Result<EvalReport> {
    let p = eval.join("report.json");
    serde_json::from_str(&read_string(&p)?).map_err(|e| Error::parse(&p, e))
}

pub fn report(eval: &Path, format: ReportFormat) -> Result<String> {
    let r = load_report(eval)?;
    Ok(match format {
        ReportFormat::Csv => summary_csv(&r),
        ReportFormat::Txt => summary_text(&r),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub crate_version: String,
    pub config_hash: String,
    /// Variants covered by the completed train stage.
    pub trained_variants: Vec<ModelVariant>,
    pub completed: Vec<String>,
}

impl Manifest {
    pub fn load(run: &Path) -> Result<Option<Self>> {
        let p = run.join(MANIFEST_FILE);
        if !p.is_file() {
            return Ok(None);
        }
        toml::from_str(&read_string(&p)?)
            .map(Some)
            .map_err(|e| Error::parse(&p, e))
    }

    pub fn save(&self, run: &Path) -> Result<()> {
        let p = run.join(MANIFEST_FILE);
        let s = toml::to_string(self).map_err(|e| Error::parse(&p, e))?;
        write_atomic(&p, s.as_bytes())
    }

    pub fn is_done(&self, stage: &str) -> bool {
        self.completed.iter().any(|s| s == stage)
    }

    fn mark(&mut self, stage: &str, run: &Path) -> Result<()> {
        if !self.is_done(stage) {
            self.completed.push(stage.to_string());
        }
        self.save(run)
    }

    /// Drops `stage` and everything recorded after it.
    fn invalidate_from(&mut self, stage: &str) {
        if let Some(i) = self.completed.iter().position(|s| s == stage) {
            self.completed.truncate(i);
        }
    }
}

pub const STAGES: [&str; 4] = ["gen-data", "train", "test-set", "eval"];

/// Runs every stage into `run`, resuming at the first incomplete stage when
/// the manifest's config hash matches.
pub fn run_full(cfg: &AppConfig, run: &Path, variants: Option<&[ModelVariant]>) -> Result<EvalReport> {
    cfg.validate()?;
    let truth = cfg.resolve_truth()?;
    truth.validate()?;
    let hash = cfg.hash(&truth);
    let variants: Vec<ModelVariant> = variants.map_or_else(|| cfg.variants.clone(), <[_]>::to_vec);
    std::fs::create_dir_all(run).map_err(|e| Error::io(run, e))?;

    let mut manifest = match Manifest::load(run)? {
        Some(m) if m.config_hash == hash => m,
        Some(_) => {
            log::warn!("configuration changed; restarting {}", run.display());
            Manifest::default()
        }
        None => Manifest::default(),
    };
    manifest.crate_version = env!("CARGO_PKG_VERSION").to_string();
    manifest.config_hash = hash;
    let resolved = toml::to_string(&AppConfig {
        truth_params: Some(truth),
        params_file: None,
        variants: variants.clone(),
        ..cfg.clone()
    })
    .map_err(|e| Error::parse(run.join("config.toml"), e))?;
    write_atomic(&run.join("config.toml"), resolved.as_bytes())?;

    let data_dir = run.join("dataset").join("train");
    let dataset = if manifest.is_done("gen-data") {
        read_dataset(&data_dir)?
    } else {
        manifest.invalidate_from("gen-data");
        let ds = gen_data(&cfg.dataset_config(), &truth, &data_dir)?;
        manifest.mark("gen-data", run)?;
        ds
    };

    let runs_dir = run.join("runs");
    if !(manifest.is_done("train") && manifest.trained_variants == variants) {
        manifest.invalidate_from("train");
        train_stage(&variants, &dataset, &truth, &cfg.train, cfg.seed, &runs_dir)?;
        manifest.trained_variants = variants.clone();
        manifest.mark("train", run)?;
    }

    let test_dir = run.join("test");
    if !manifest.is_done("test-set") {
        manifest.invalidate_from("test-set");
        ensure_test_set(&test_dir, &dataset, &truth, &cfg.test)?;
        manifest.mark("test-set", run)?;
    }

    let eval_dir = run.join("eval");
    if manifest.is_done("eval") {
        if let Ok(r) = load_report(&eval_dir) {
            return Ok(r);
        }
    }
    manifest.invalidate_from("eval");
    let report = eval_stage(&runs_dir, &test_dir, &data_dir, &cfg.test, &eval_dir)?;
    manifest.mark("eval", run)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> AppConfig {
        let mut cfg = AppConfig {
            seed: 5,
            variants: vec![ModelVariant::Graybox, ModelVariant::Blackbox],
            ..Default::default()
        };
        cfg.dataset.schedule = vec![50, 100];
        cfg.train.epochs = 2;
        cfg.train.seeds = 2;
        cfg.train.hidden = vec![8];
        cfg.test = TestSetConfig {
            n_inputs: 2,
            n_initial: 2,
            steps: 60,
        };
        cfg
    }

    #[test]
    fn full_then_resume() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny();
        let r1 = run_full(&cfg, dir.path(), None).unwrap();
        let m = Manifest::load(dir.path()).unwrap().unwrap();
        assert_eq!(m.completed, STAGES.to_vec());
        let summary = std::fs::read(dir.path().join("eval/summary.csv")).unwrap();
        let r2 = run_full(&cfg, dir.path(), None).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(std::fs::read(dir.path().join("eval/summary.csv")).unwrap(), summary);
        assert_eq!(
            report(&dir.path().join("eval"), ReportFormat::Csv).unwrap(),
            String::from_utf8(summary).unwrap()
        );
    }

    #[test]
    fn variant_restriction() {
        let dir = tempfile::tempdir().unwrap();
        let r = run_full(&tiny(), dir.path(), Some(&[ModelVariant::Graybox])).unwrap();
        assert_eq!(r.summaries.len(), 1);
        assert_eq!(r.instances.len(), 2);
    }
}
