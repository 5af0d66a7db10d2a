//! Held-out evaluation: open-loop Euler rollouts from the measured initial
//! output, normalized MSE against the truth, and per-variant aggregation
//! with Tukey fences on the instance mean MSEs.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::excitation::{gen_input_trajectory, sample_initial_condition, DatasetConfig, NormStats, Trajectory};
use crate::io::write_atomic;
use crate::models::{constraint_penalty, constraint_violation, ConstraintSpec, ModelVariant, TrainableModel};
use crate::ndiff::bptt::{output_residual, DIVERGENCE_BOUND};
use crate::plant::{Input, Output, PlantState, TruthParams};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TestSetConfig {
    pub n_inputs: usize,
    pub n_initial: usize,
    pub steps: usize,
}

impl Default for TestSetConfig {
    fn default() -> Self {
        Self {
            n_inputs: 5,
            n_initial: 5,
            steps: 5000,
        }
    }
}

/// `n_inputs x n_initial` truth trajectories, input-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TestSet {
    pub seed: u64,
    pub config: TestSetConfig,
    pub delta: f64,
    pub initial_conditions: Vec<PlantState>,
    pub trajectories: Vec<Trajectory>,
}

/// Generates the test set with the same excitation machinery as training.
///
/// Every input trajectory is paired with every initial condition.
pub fn build_test_set(
    truth: &TruthParams,
    data: &DatasetConfig,
    cfg: &TestSetConfig,
    test_seed: u64,
) -> Result<TestSet> {
    data.validate()?;
    let mut ic_rng = seed::rng(test_seed, "test-ic", 0);
    let ics: Vec<PlantState> = (0..cfg.n_initial)
        .map(|_| sample_initial_condition(&data.excitation, &mut ic_rng))
        .collect();
    let inputs = (0..cfg.n_inputs)
        .map(|i| {
            gen_input_trajectory(
                cfg.steps,
                data.delta,
                &data.excitation,
                seed::derive(test_seed, "test-input", i as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(usize, usize)> = (0..cfg.n_inputs)
        .flat_map(|i| (0..cfg.n_initial).map(move |j| (i, j)))
        .collect();
    let trajectories = pairs
        .par_iter()
        .map(|&(i, j)| Trajectory::simulate(&ics[j], inputs[i].clone(), truth, &data.integrator()))
        .collect::<Result<Vec<_>>>()?;
    Ok(TestSet {
        seed: test_seed,
        config: cfg.clone(),
        delta: data.delta,
        initial_conditions: ics,
        trajectories,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub outputs: Vec<[f64; 8]>,
    /// First step at which the state was non-finite, beyond the divergence
    /// bound, or at the pitch singularity. `outputs` stops before it.
    pub diverged_at: Option<usize>,
}

/// Open-loop Euler rollout of `n` steps from `z0`; returns `n + 1` samples
/// unless truncated by divergence.
pub fn rollout_model(model: &TrainableModel, z0: &[f64; 8], inputs: &[Input], delta: f64, n: usize) -> Result<Rollout> {
    if inputs.len() < n {
        return Err(Error::Shape(format!("{} inputs for {n} steps", inputs.len())));
    }
    if z0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Shape("non-finite initial output".into()));
    }
    let mut cache = vec![0.0; model.cache_len()];
    let mut outputs = Vec::with_capacity(n + 1);
    let mut z = *z0;
    outputs.push(z);
    for (k, u) in inputs[..n].iter().enumerate() {
        let f = match model.rhs_cached(&z, u, &mut cache) {
            Ok(f) => f,
            Err(Error::Singularity { .. }) => {
                return Ok(Rollout {
                    outputs,
                    diverged_at: Some(k + 1),
                })
            }
            Err(e) => return Err(e),
        };
        for i in 0..8 {
            z[i] += delta * f[i];
        }
        if z.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_BOUND) {
            return Ok(Rollout {
                outputs,
                diverged_at: Some(k + 1),
            });
        }
        outputs.push(z);
    }
    Ok(Rollout {
        outputs,
        diverged_at: None,
    })
}

/// Squared normalized residual per channel: `(wrap(y - z) / std)^2`.
pub fn normalized_sq_residual(z: &[f64; 8], y: &[f64; 8], stats: &NormStats) -> [f64; 8] {
    let d = output_residual(y, z);
    std::array::from_fn(|c| (d[c] / stats.std[c]).powi(2))
}

/// Mean over samples of the squared 2-norm between standardized
/// trajectories. Standardizing both by the training statistics reduces to
/// dividing the (yaw-wrapped) difference by the training std.
pub fn normalized_mse(z: &[[f64; 8]], y: &[Output], stats: &NormStats) -> Result<f64> {
    if z.len() != y.len() || z.is_empty() {
        return Err(Error::Shape(format!("trajectory lengths {} and {}", z.len(), y.len())));
    }
    stats.validate()?;
    let total: f64 = z
        .iter()
        .zip(y)
        .map(|(zk, yk)| normalized_sq_residual(zk, &yk.0, stats).iter().sum::<f64>())
        .sum();
    Ok(total / z.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceEval {
    pub variant: ModelVariant,
    pub instance: usize,
    /// One MSE per test trajectory; computed up to truncation when diverged.
    pub mses: Vec<f64>,
    pub diverged_trajectories: Vec<usize>,
    pub mean_mse: f64,
    /// Mean boundary penalty `||c(z)||_2` over every rollout sample.
    pub mean_penalty: f64,
}

impl InstanceEval {
    pub fn diverged(&self) -> bool {
        !self.diverged_trajectories.is_empty()
    }
}

pub fn evaluate_instance(
    model: &TrainableModel,
    instance: usize,
    test: &TestSet,
    stats: &NormStats,
) -> Result<InstanceEval> {
    let spec = ConstraintSpec::default();
    let per_traj = test
        .trajectories
        .par_iter()
        .map(|t| {
            let ro = rollout_model(model, &t.outputs[0].0, &t.inputs, test.delta, t.steps())?;
            let mse = normalized_mse(&ro.outputs, &t.outputs[..ro.outputs.len()], stats)?;
            let pen: f64 = ro
                .outputs
                .iter()
                .map(|z| constraint_penalty(&constraint_violation(z, &spec)))
                .sum();
            Ok((mse, ro.diverged_at.is_some(), pen, ro.outputs.len()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mses: Vec<f64> = per_traj.iter().map(|p| p.0).collect();
    let diverged_trajectories = per_traj
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.1.then_some(i))
        .collect();
    let samples: usize = per_traj.iter().map(|p| p.3).sum();
    Ok(InstanceEval {
        variant: model.variant,
        instance,
        mean_mse: mses.iter().sum::<f64>() / mses.len() as f64,
        mses,
        diverged_trajectories,
        mean_penalty: per_traj.iter().map(|p| p.2).sum::<f64>() / samples as f64,
    })
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Indices of values inside `[Q1 - 1.5 IQR, Q3 + 1.5 IQR]`.
pub fn iqr_retain(values: &[f64]) -> Vec<usize> {
    if values.is_empty() {
        return Vec::new();
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile(&sorted, 0.25);
    let q3 = quantile(&sorted, 0.75);
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    (0..values.len())
        .filter(|&i| values[i] >= lo && values[i] <= hi)
        .collect()
}

/// Sample standard deviation; zero for fewer than two values.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = values.iter().sum::<f64>() / values.len() as f64;
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: ModelVariant,
    pub instances: Vec<usize>,
    pub instance_means: Vec<f64>,
    /// Instances kept by the IQR fence (diverged instances never enter the pool).
    pub retained: Vec<usize>,
    pub diverged: Vec<usize>,
    pub mean_mse: Option<f64>,
    pub std_mse: Option<f64>,
    pub best_instance: Option<usize>,
    pub mean_penalty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub instances: Vec<InstanceEval>,
    pub summaries: Vec<VariantSummary>,
}

impl EvalReport {
    pub fn summary(&self, variant: ModelVariant) -> Option<&VariantSummary> {
        self.summaries.iter().find(|s| s.variant == variant)
    }
}

/// Aggregates instance evaluations per variant, in first-appearance order.
pub fn aggregate_report(instances: Vec<InstanceEval>) -> Result<EvalReport> {
    let mut variants: Vec<ModelVariant> = Vec::new();
    for e in &instances {
        if !variants.contains(&e.variant) {
            variants.push(e.variant);
        }
    }
    let mut summaries = Vec::with_capacity(variants.len());
    for v in variants {
        let group: Vec<&InstanceEval> = instances.iter().filter(|e| e.variant == v).collect();
        if group.len() < 2 {
            return Err(Error::config(
                "seeds",
                format!("variant {v} has {} instance(s), need at least 2", group.len()),
            ));
        }
        let pool: Vec<&InstanceEval> = group.iter().copied().filter(|e| !e.diverged()).collect();
        let pool_means: Vec<f64> = pool.iter().map(|e| e.mean_mse).collect();
        let kept = iqr_retain(&pool_means);
        let retained: Vec<usize> = kept.iter().map(|&i| pool[i].instance).collect();
        let retained_means: Vec<f64> = kept.iter().map(|&i| pool_means[i]).collect();
        let (mean_mse, std_mse) = if retained_means.is_empty() {
            (None, None)
        } else {
            (
                Some(retained_means.iter().sum::<f64>() / retained_means.len() as f64),
                Some(sample_std(&retained_means)),
            )
        };
        let best_instance = kept
            .iter()
            .min_by(|&&a, &&b| pool_means[a].total_cmp(&pool_means[b]))
            .map(|&i| pool[i].instance);
        summaries.push(VariantSummary {
            variant: v,
            instances: group.iter().map(|e| e.instance).collect(),
            instance_means: group.iter().map(|e| e.mean_mse).collect(),
            retained,
            diverged: group.iter().filter(|e| e.diverged()).map(|e| e.instance).collect(),
            mean_mse,
            std_mse,
            best_instance,
            mean_penalty: group.iter().map(|e| e.mean_penalty).sum::<f64>() / group.len() as f64,
        });
    }
    Ok(EvalReport { instances, summaries })
}

/// Evaluates every model on the test set and aggregates.
pub fn evaluate_models(models: &[(TrainableModel, usize)], test: &TestSet, stats: &NormStats) -> Result<EvalReport> {
    let instances = models
        .iter()
        .map(|(m, j)| evaluate_instance(m, *j, test, stats))
        .collect::<Result<Vec<_>>>()?;
    aggregate_report(instances)
}

pub const SUMMARY_HEADER: &str = "variant,mean_mse,std_mse,retained,diverged,best_seed";

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |x| format!("{x:.6}"))
}

pub fn summary_csv(report: &EvalReport) -> String {
    let mut s = String::from(SUMMARY_HEADER);
    s.push('\n');
    for r in &report.summaries {
        let best = r.best_instance.map_or_else(String::new, |b| b.to_string());
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.variant,
            fmt_opt(r.mean_mse),
            fmt_opt(r.std_mse),
            r.retained.len(),
            r.diverged.len(),
            best
        );
    }
    s
}

pub fn summary_text(report: &EvalReport) -> String {
    let mut s = format!(
        "{:<12} {:>14} {:>14} {:>9} {:>9} {:>10}\n",
        "model", "mean MSE", "std", "retained", "diverged", "best seed"
    );
    for r in &report.summaries {
        let best = r.best_instance.map_or_else(|| "-".to_string(), |b| b.to_string());
        let _ = writeln!(
            s,
            "{:<12} {:>14} {:>14} {:>9} {:>9} {:>10}",
            r.variant.to_string(),
            fmt_opt(r.mean_mse),
            fmt_opt(r.std_mse),
            r.retained.len(),
            r.diverged.len(),
            best
        );
    }
    s
}

/// Per-time-step mean and std across trajectories of the squared normalized
/// residual on one channel. Diverged rollouts contribute up to truncation.
pub fn residual_series(
    rollouts: &[Rollout],
    test: &TestSet,
    stats: &NormStats,
    channel: usize,
) -> (Vec<f64>, Vec<f64>) {
    let len = test.config.steps + 1;
    let mut mean = vec![0.0; len];
    let mut std = vec![0.0; len];
    for k in 0..len {
        let vals: Vec<f64> = rollouts
            .iter()
            .zip(&test.trajectories)
            .filter(|(r, _)| k < r.outputs.len())
            .map(|(r, t)| normalized_sq_residual(&r.outputs[k], &t.outputs[k].0, stats)[channel])
            .collect();
        if vals.is_empty() {
            mean[k] = f64::NAN;
            std[k] = f64::NAN;
            continue;
        }
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        mean[k] = m;
        std[k] = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
    }
    (mean, std)
}

const GNUPLOT_TEMPLATE: &str = r#"# Usage: gnuplot -e "variant='graybox'" plot.gp
if (!exists("variant")) variant = 'graybox'
set datafile separator ','
set key autotitle columnhead
set terminal pngcairo size 1200,800
set output 'residual_theta.png'
set xlabel 't [s]'
set ylabel 'normalized squared residual'
plot for [i=2:*:2] 'residual_theta.csv' using 1:i with lines
set output 'residual_u.png'
plot for [i=2:*:2] 'residual_u.csv' using 1:i with lines
set output 'overlay_'.variant.'.png'
set multiplot layout 4,2
do for [c=0:7] { plot 'overlay_'.variant.'.csv' using 1:(column(2+2*c)) with lines, '' using 1:(column(3+2*c)) with lines }
unset multiplot
"#;

/// Writes the summary table, residual series for pitch and surge and
/// best-instance overlays on test trajectory 0.
pub fn emit_artifacts(
    report: &EvalReport,
    models: &[(TrainableModel, usize)],
    test: &TestSet,
    stats: &NormStats,
    out: &Path,
) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_atomic(&out.join("summary.csv"), summary_csv(report).as_bytes())?;
    write_atomic(&out.join("summary.txt"), summary_text(report).as_bytes())?;

    let mut inst = String::from("variant,seed,trajectory,mse,diverged\n");
    for e in &report.instances {
        for (k, m) in e.mses.iter().enumerate() {
            let _ = writeln!(
                inst,
                "{},{},{},{},{}",
                e.variant,
                e.instance,
                k,
                m,
                e.diverged_trajectories.contains(&k)
            );
        }
    }
    write_atomic(&out.join("instances.csv"), inst.as_bytes())?;

    let mut best: Vec<(ModelVariant, &TrainableModel, Vec<Rollout>)> = Vec::new();
    for s in &report.summaries {
        let Some(b) = s.best_instance else { continue };
        let Some((m, _)) = models.iter().find(|(m, j)| m.variant == s.variant && *j == b) else {
            continue;
        };
        let rollouts = test
            .trajectories
            .par_iter()
            .map(|t| rollout_model(m, &t.outputs[0].0, &t.inputs, test.delta, t.steps()))
            .collect::<Result<Vec<_>>>()?;
        best.push((s.variant, m, rollouts));
    }

    for (channel, file) in [(Output::THETA, "residual_theta.csv"), (Output::U, "residual_u.csv")] {
        let series: Vec<(ModelVariant, Vec<f64>, Vec<f64>)> = best
            .iter()
            .map(|(v, _, r)| {
                let (m, s) = residual_series(r, test, stats, channel);
                (*v, m, s)
            })
            .collect();
        let mut csv = String::from("t");
        for (v, _, _) in &series {
            let _ = write!(csv, ",{v}_mean,{v}_std");
        }
        csv.push('\n');
        for k in 0..=test.config.steps {
            let _ = write!(csv, "{:.6}", k as f64 * test.delta);
            for (_, m, s) in &series {
                let _ = write!(csv, ",{},{}", m[k], s[k]);
            }
            csv.push('\n');
        }
        write_atomic(&out.join(file), csv.as_bytes())?;
    }

    if let Some(t0) = test.trajectories.first() {
        for (v, _, rollouts) in &best {
            let ro = &rollouts[0];
            let mut csv = String::from("t");
            for name in Output::NAMES {
                let _ = write!(csv, ",{name}_true,{name}_pred");
            }
            csv.push('\n');
            for (k, y) in t0.outputs.iter().enumerate() {
                let _ = write!(csv, "{:.6}", k as f64 * test.delta);
                for c in 0..8 {
                    let pred = ro.outputs.get(k).map_or(f64::NAN, |z| z[c]);
                    let _ = write!(csv, ",{},{}", y.0[c], pred);
                }
                csv.push('\n');
            }
            write_atomic(&out.join(format!("overlay_{}.csv", v.slug())), csv.as_bytes())?;
        }
    }
    write_atomic(&out.join("plot.gp"), GNUPLOT_TEMPLATE.as_bytes())?;
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::parse(out.join("report.json"), e))?;
    write_atomic(&out.join("report.json"), json.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndiff::{Activation, Mlp};

    fn unit_stats() -> NormStats {
        NormStats {
            mean: [0.0; 8],
            std: [1.0; 8],
        }
    }

    #[test]
    fn mse_zero_for_identical() {
        let y: Vec<Output> = (0..10).map(|k| Output([k as f64 * 0.1; 8])).collect();
        let z: Vec<[f64; 8]> = y.iter().map(|o| o.0).collect();
        assert_eq!(normalized_mse(&z, &y, &unit_stats()).unwrap(), 0.0);
    }

    #[test]
    fn mse_unit_constant_error() {
        let y = vec![Output([0.0; 8]); 7];
        let mut zk = [0.0; 8];
        zk[Output::U] = 1.0;
        let z = vec![zk; 7];
        assert_eq!(normalized_mse(&z, &y, &unit_stats()).unwrap(), 1.0);
    }

    #[test]
    fn mse_length_mismatch() {
        assert!(normalized_mse(&[[0.0; 8]; 3], &[Output([0.0; 8]); 4], &unit_stats()).is_err());
    }

    #[test]
    fn iqr_fences_outlier() {
        let mut v = vec![1.0; 9];
        v.push(100.0);
        assert_eq!(iqr_retain(&v), (0..9).collect::<Vec<_>>());
        let same = vec![2.5; 10];
        assert_eq!(iqr_retain(&same).len(), 10);
        assert_eq!(sample_std(&same), 0.0);
    }

    #[test]
    fn iqr_is_a_single_pass() {
        // Sorted: .3 .39 .4 .41 .45 .5 2 9; Q1 = .3975, Q3 = .875, upper fence 1.59125.
        let v = [0.3, 0.5, 0.4, 0.45, 2.0, 0.41, 0.39, 9.0];
        assert_eq!(iqr_retain(&v), vec![0, 1, 2, 3, 5, 6]);
        // A second pass on the survivors would trim further; aggregation does not iterate.
        let kept: Vec<f64> = [0, 1, 2, 3, 5, 6].iter().map(|&i| v[i]).collect();
        assert!(iqr_retain(&kept).len() < kept.len());
    }

    #[test]
    fn zero_field_constant_rollout() {
        let mlp = Mlp::zeros(&[11, 4, 8], Activation::Tanh).unwrap();
        let m = TrainableModel::new(ModelVariant::Blackbox, Some(mlp), None, None).unwrap();
        let z0 = [0.1, 0.2, 1.0, 0.0, 0.0, 0.5, 0.1, -0.1];
        let ro = rollout_model(&m, &z0, &[Input::new(0.5, 0.5, 0.5); 50], 0.01, 50).unwrap();
        assert_eq!(ro.outputs.len(), 51);
        assert!(ro.outputs.iter().all(|z| *z == z0));
        assert!(ro.diverged_at.is_none());
    }

    #[test]
    fn divergence_truncates() {
        let mut params = vec![0.0; 11 * 8 + 8];
        params[88 + 2] = 1e9;
        let mlp = Mlp::from_params(&[11, 8], Activation::Identity, params).unwrap();
        let m = TrainableModel::new(ModelVariant::Blackbox, Some(mlp), None, None).unwrap();
        let ro = rollout_model(&m, &[0.0; 8], &[Input::default(); 10], 0.01, 10).unwrap();
        assert_eq!(ro.diverged_at, Some(1));
        assert_eq!(ro.outputs.len(), 1);
    }

    fn fake_instance(v: ModelVariant, j: usize, mean: f64, diverged: bool) -> InstanceEval {
        InstanceEval {
            variant: v,
            instance: j,
            mses: vec![mean; 25],
            diverged_trajectories: if diverged { vec![3] } else { vec![] },
            mean_mse: mean,
            mean_penalty: 0.0,
        }
    }

    #[test]
    fn aggregation_by_hand() {
        let v = ModelVariant::Graybox;
        let means = [1.0, 2.0, 3.0, 4.0, 50.0];
        let mut inst: Vec<InstanceEval> = means
            .iter()
            .enumerate()
            .map(|(j, &m)| fake_instance(v, j, m, false))
            .collect();
        inst.push(fake_instance(v, 5, 0.1, true));
        let r = aggregate_report(inst).unwrap();
        let s = r.summary(v).unwrap();
        // Q1 = 2, Q3 = 4, fences [-1, 7]: 50 is removed, the diverged one never pooled.
        assert_eq!(s.retained, vec![0, 1, 2, 3]);
        assert_eq!(s.diverged, vec![5]);
        assert_eq!(s.mean_mse, Some(2.5));
        assert!((s.std_mse.unwrap() - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(s.best_instance, Some(0));
    }

    #[test]
    fn single_instance_rejected() {
        assert!(aggregate_report(vec![fake_instance(ModelVariant::Blackbox, 0, 1.0, false)]).is_err());
    }
}
