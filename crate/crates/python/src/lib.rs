//! Python bindings: truth simulation, datasets, model training and rollout,
//! and the evaluation metrics. Arrays cross the boundary as nested lists.

use std::collections::HashMap;
use std::path::PathBuf;

use auv_sysid::checkpoint::Checkpoint;
use auv_sysid::evaluate::{normalized_mse as nmse, rollout_model};
use auv_sysid::excitation::{build_dataset as build, DatasetConfig};
use auv_sysid::io::{read_dataset, write_dataset};
use auv_sysid::models::{constraint_penalty as penalty, constraint_violation as violation, MlpScaling};
use auv_sysid::plant::{integrate_truth, output_map, Integrator};
use auv_sysid::train::{fit, initialize_model};
use auv_sysid::{ConstraintSpec, Input, ModelVariant, Output, PlantState, TrainConfig, TrainableModel};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: auv_sysid::Error) -> PyErr {
    match e {
        auv_sysid::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        e if e.is_usage() => PyValueError::new_err(e.to_string()),
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

fn inputs_from(rows: &[[f64; 3]]) -> Vec<Input> {
    rows.iter().map(|r| Input::from_array(*r)).collect()
}

/// Truth-plant coefficients. Keyword overrides use the parameter-file names
/// (`X_uu`, `k`, `M_uq`, ..., `K_dr`).
#[pyclass(name = "TruthParams", from_py_object)]
#[derive(Clone)]
struct PyTruthParams(auv_sysid::TruthParams);

#[pymethods]
impl PyTruthParams {
    #[new]
    #[pyo3(signature = (**overrides))]
    fn new(overrides: Option<HashMap<String, f64>>) -> PyResult<Self> {
        let mut v = serde_json::to_value(auv_sysid::TruthParams::default()).expect("plain struct");
        for (k, x) in overrides.unwrap_or_default() {
            match v.get_mut(&k) {
                Some(slot) => *slot = x.into(),
                None => return Err(PyValueError::new_err(format!("unknown parameter `{k}`"))),
            }
        }
        let p: auv_sysid::TruthParams = serde_json::from_value(v).map_err(|e| PyValueError::new_err(e.to_string()))?;
        p.validate().map_err(to_py)?;
        Ok(Self(p))
    }

    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        auv_sysid::io::read_truth_params(&path).map(Self).map_err(to_py)
    }

    /// The eight hydrodynamic coefficients, in file order.
    fn mu(&self) -> [f64; 8] {
        self.0.mu()
    }

    fn to_dict(&self) -> HashMap<String, f64> {
        serde_json::from_value(serde_json::to_value(self.0).expect("plain struct")).expect("all fields are numbers")
    }

    fn __repr__(&self) -> String {
        format!("TruthParams({:?})", self.0)
    }
}

/// Integrates the truth plant from the 12-state `x0` under zero-order-hold
/// `inputs` and returns the `len(inputs) + 1` eight-channel outputs.
#[pyfunction]
#[pyo3(signature = (params, x0, inputs, delta = 0.01, substeps = 4))]
fn simulate(
    params: &PyTruthParams,
    x0: [f64; 12],
    inputs: Vec<[f64; 3]>,
    delta: f64,
    substeps: usize,
) -> PyResult<Vec<[f64; 8]>> {
    let u = inputs_from(&inputs);
    let states = integrate_truth(
        &PlantState::from_array(x0),
        &u,
        &params.0,
        &Integrator { delta, substeps },
        u.len(),
    )
    .map_err(to_py)?;
    Ok(states.iter().map(|x| output_map(x).0).collect())
}

#[pyclass(name = "Dataset", from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: auv_sysid::Dataset,
    truth: auv_sysid::TruthParams,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        let inner = read_dataset(&dir).map_err(to_py)?;
        let truth = auv_sysid::io::read_truth_params(&dir.join(auv_sysid::io::TRUTH_FILE)).map_err(to_py)?;
        Ok(Self { inner, truth })
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        write_dataset(&dir, &self.inner, &self.truth).map_err(to_py)
    }

    fn lengths(&self) -> Vec<usize> {
        self.inner.lengths()
    }

    #[getter]
    fn delta(&self) -> f64 {
        self.inner.delta()
    }

    fn __len__(&self) -> usize {
        self.inner.batches.len()
    }

    /// `(inputs, outputs)` of batch `i`.
    fn batch(&self, i: usize) -> PyResult<(Vec<[f64; 3]>, Vec<[f64; 8]>)> {
        let t = self
            .inner
            .batches
            .get(i)
            .ok_or_else(|| PyValueError::new_err(format!("batch {i} out of range")))?;
        Ok((
            t.inputs.iter().map(Input::to_array).collect(),
            t.outputs.iter().map(|y| y.0).collect(),
        ))
    }

    /// Per-channel `(mean, std)` used for normalized errors.
    fn norm_stats(&self) -> ([f64; 8], [f64; 8]) {
        (self.inner.stats.mean, self.inner.stats.std)
    }
}

/// Curriculum dataset: one randomly excited trajectory per schedule entry.
#[pyfunction]
#[pyo3(signature = (params, seed, schedule = vec![100, 200, 400, 800, 1600], delta = 0.01))]
fn build_dataset(params: &PyTruthParams, seed: u64, schedule: Vec<usize>, delta: f64) -> PyResult<PyDataset> {
    let cfg = DatasetConfig {
        seed,
        schedule,
        delta,
        ..Default::default()
    };
    let inner = build(&params.0, &cfg).map_err(to_py)?;
    Ok(PyDataset { inner, truth: params.0 })
}

#[pyclass(name = "Model")]
struct PyModel(TrainableModel);

#[pymethods]
impl PyModel {
    /// Seed-derived initial model for `variant` (`blackbox`, `cblackbox`,
    /// `graybox`, `hybrid:<e_mu>`), scaled to `dataset`.
    #[staticmethod]
    #[pyo3(signature = (variant, params, dataset, seed = 0, instance = 0, hidden = None))]
    fn init(
        variant: &str,
        params: &PyTruthParams,
        dataset: &PyDataset,
        seed: u64,
        instance: usize,
        hidden: Option<Vec<usize>>,
    ) -> PyResult<Self> {
        let v: ModelVariant = variant.parse().map_err(to_py)?;
        let mut cfg = TrainConfig::default();
        if let Some(h) = hidden {
            cfg.hidden = h;
        }
        cfg.validate().map_err(to_py)?;
        let scaling = MlpScaling::from_dataset(&dataset.inner).map_err(to_py)?;
        initialize_model(v, &params.0, &cfg, seed, instance, scaling)
            .map(Self)
            .map_err(to_py)
    }

    /// Loads the model stored in a training checkpoint.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Checkpoint::load(&path).map(|c| Self(c.model)).map_err(to_py)
    }

    /// Trains in place through the dataset's curriculum and returns the
    /// per-epoch losses.
    #[pyo3(signature = (dataset, epochs = 50, graybox_epochs = 200, seed = 0))]
    fn train(
        &mut self,
        py: Python<'_>,
        dataset: &PyDataset,
        epochs: usize,
        graybox_epochs: usize,
        seed: u64,
    ) -> PyResult<Vec<f64>> {
        let cfg = TrainConfig {
            epochs,
            graybox_epochs,
            hidden: self.0.mlp.as_ref().map_or_else(
                || TrainConfig::default().hidden,
                |m| {
                    let d = m.dims();
                    d[1..d.len() - 1].to_vec()
                },
            ),
            ..Default::default()
        };
        let model = self.0.clone();
        let run = py
            .detach(|| fit(model, 0, seed, &dataset.inner, &cfg, &|_| {}))
            .map_err(to_py)?;
        if !run.status.is_completed() {
            return Err(PyRuntimeError::new_err(format!("training stopped: {:?}", run.status)));
        }
        self.0 = run.model;
        Ok(run.history.iter().map(|r| r.loss).collect())
    }

    /// Vector field at output `z` and input `u`.
    fn rhs(&self, z: [f64; 8], u: [f64; 3]) -> PyResult<[f64; 8]> {
        self.0.rhs(&z, &Input::from_array(u)).map_err(to_py)
    }

    /// Open-loop Euler rollout from `z0`. Returns the predicted outputs and
    /// the step at which the rollout diverged, if it did.
    #[pyo3(signature = (z0, inputs, delta = 0.01))]
    fn rollout(&self, z0: [f64; 8], inputs: Vec<[f64; 3]>, delta: f64) -> PyResult<(Vec<[f64; 8]>, Option<usize>)> {
        let u = inputs_from(&inputs);
        let r = rollout_model(&self.0, &z0, &u, delta, u.len()).map_err(to_py)?;
        Ok((r.outputs, r.diverged_at))
    }

    #[getter]
    fn variant(&self) -> String {
        self.0.variant.to_string()
    }

    #[getter]
    fn n_trainable(&self) -> usize {
        self.0.n_trainable()
    }

    /// Current graybox coefficients, if the model has a graybox part.
    fn graybox_mu(&self) -> Option<[f64; 8]> {
        self.0.graybox.map(|g| g.mu)
    }

    fn __repr__(&self) -> String {
        format!("Model({}, {} trainable)", self.0.variant, self.0.n_trainable())
    }
}

/// Normalized MSE of `predicted` against `target` (equal lengths, or a
/// truncated prediction) using the dataset's channel statistics.
#[pyfunction]
fn normalized_mse(predicted: Vec<[f64; 8]>, target: Vec<[f64; 8]>, dataset: &PyDataset) -> PyResult<f64> {
    if predicted.len() > target.len() {
        return Err(PyValueError::new_err("prediction longer than target"));
    }
    let y: Vec<Output> = target[..predicted.len()].iter().map(|t| Output(*t)).collect();
    nmse(&predicted, &y, &dataset.inner.stats).map_err(to_py)
}

/// Per-channel distance of `z` outside the admissible output box.
#[pyfunction]
fn constraint_violation(z: [f64; 8]) -> [f64; 8] {
    violation(&z, &ConstraintSpec::default())
}

/// Euclidean norm of a violation vector.
#[pyfunction]
fn constraint_penalty(c: [f64; 8]) -> f64 {
    penalty(&c)
}

#[pymodule(name = "auv_sysid")]
fn auv_sysid_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyTruthParams>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(build_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(normalized_mse, m)?)?;
    m.add_function(wrap_pyfunction!(constraint_violation, m)?)?;
    m.add_function(wrap_pyfunction!(constraint_penalty, m)?)?;
    Ok(())
}
