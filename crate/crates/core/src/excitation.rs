//! Excitation signals, initial conditions and curriculum datasets.
//!
//! An input trajectory is a concatenation of base segments of equal
//! duration. Each segment is a step, a sinusoid or a cubic through random
//! knots, drawn independently per channel and clipped into the channel band.

use std::f64::consts::PI;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::{integrate_truth, output_map, Input, Integrator, Output, PlantState, TruthParams};
use crate::seed::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaseSegmentKind {
    Step,
    Periodic,
    Spline,
}

impl BaseSegmentKind {
    pub const ALL: [BaseSegmentKind; 3] = [Self::Step, Self::Periodic, Self::Spline];

    pub fn sample(rng: &mut Rng) -> Self {
        Self::ALL[rng.random_range(0..3)]
    }
}

/// Sampling bands for excitation and initial conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExcitationConfig {
    /// Per-channel `[lo, hi]`; must lie inside the input box.
    pub thrust_band: [f64; 2],
    pub elevator_band: [f64; 2],
    pub rudder_band: [f64; 2],
    /// Sinusoid frequency band in Hz.
    pub frequency_band: [f64; 2],
    pub spline_knots: usize,
    pub segments: usize,
    /// Initial pitch drawn from `+-theta_fraction * pi/2`.
    pub theta_fraction: f64,
    pub surge_band: [f64; 2],
    /// Initial `q` and `r` drawn from `+-rate_bound`.
    pub rate_bound: f64,
}

impl Default for ExcitationConfig {
    fn default() -> Self {
        Self {
            thrust_band: [0.25, 1.0],
            elevator_band: [-1.0, 1.0],
            rudder_band: [-1.0, 1.0],
            frequency_band: [0.05, 0.5],
            spline_knots: 4,
            segments: 50,
            theta_fraction: 0.9,
            surge_band: [0.5, 2.5],
            rate_bound: 0.2,
        }
    }
}

impl ExcitationConfig {
    pub fn bands(&self) -> [[f64; 2]; 3] {
        [self.thrust_band, self.elevator_band, self.rudder_band]
    }

    pub fn validate(&self) -> Result<()> {
        let names = ["thrust_band", "elevator_band", "rudder_band"];
        for (i, band) in self.bands().iter().enumerate() {
            if !(band[0] <= band[1] && band[0] >= Input::LOWER[i] && band[1] <= Input::UPPER[i]) {
                return Err(Error::config(names[i], "band must be ordered and inside the input box"));
            }
        }
        let [f0, f1] = self.frequency_band;
        if !(f0 > 0.0 && f0 <= f1) {
            return Err(Error::config("frequency_band", "must be positive and ordered"));
        }
        if self.spline_knots < 2 {
            return Err(Error::config("spline_knots", "need at least two knots"));
        }
        if self.segments == 0 {
            return Err(Error::config("segments", "must be positive"));
        }
        if !(self.theta_fraction > 0.0 && self.theta_fraction < 1.0) {
            return Err(Error::config("theta_fraction", "must lie in (0, 1)"));
        }
        if !(self.surge_band[0] <= self.surge_band[1]) {
            return Err(Error::config("surge_band", "must be ordered"));
        }
        if !(self.rate_bound >= 0.0) {
            return Err(Error::config("rate_bound", "must be nonnegative"));
        }
        Ok(())
    }
}

/// A fully parameterized single-channel base signal.
#[derive(Debug, Clone, PartialEq)]
pub enum BaseShape {
    Step {
        level: f64,
    },
    Periodic {
        offset: f64,
        amplitude: f64,
        frequency: f64,
        phase: f64,
    },
    /// Knots equally spaced over the segment duration.
    Spline {
        knots: Vec<f64>,
    },
}

impl BaseShape {
    pub fn sample(kind: BaseSegmentKind, band: [f64; 2], cfg: &ExcitationConfig, rng: &mut Rng) -> Self {
        let [lo, hi] = band;
        let uniform = |rng: &mut Rng, a: f64, b: f64| if a < b { rng.random_range(a..=b) } else { a };
        match kind {
            BaseSegmentKind::Step => BaseShape::Step {
                level: uniform(rng, lo, hi),
            },
            BaseSegmentKind::Periodic => BaseShape::Periodic {
                offset: uniform(rng, lo, hi),
                amplitude: uniform(rng, 0.0, 0.5 * (hi - lo)),
                frequency: uniform(rng, cfg.frequency_band[0], cfg.frequency_band[1]),
                phase: uniform(rng, 0.0, 2.0 * PI),
            },
            BaseSegmentKind::Spline => BaseShape::Spline {
                knots: (0..cfg.spline_knots).map(|_| uniform(rng, lo, hi)).collect(),
            },
        }
    }

    /// Value at time `t` into a segment of length `duration`, before clipping.
    pub fn value(&self, t: f64, duration: f64) -> f64 {
        match self {
            BaseShape::Step { level } => *level,
            BaseShape::Periodic {
                offset,
                amplitude,
                frequency,
                phase,
            } => offset + amplitude * (2.0 * PI * frequency * t + phase).sin(),
            BaseShape::Spline { knots } => {
                // Lagrange interpolant through the knots (a cubic for four knots).
                let m = knots.len();
                let s = if duration > 0.0 {
                    t / duration * (m - 1) as f64
                } else {
                    0.0
                };
                let mut acc = 0.0;
                for (j, kj) in knots.iter().enumerate() {
                    let mut basis = 1.0;
                    for i in 0..m {
                        if i != j {
                            basis *= (s - i as f64) / (j as f64 - i as f64);
                        }
                    }
                    acc += kj * basis;
                }
                acc
            }
        }
    }
}

/// Generates `n_samples` inputs of one base segment; all channels independent.
pub fn gen_base_segment(
    kind: BaseSegmentKind,
    n_samples: usize,
    delta: f64,
    cfg: &ExcitationConfig,
    rng: &mut Rng,
) -> Vec<Input> {
    let bands = cfg.bands();
    let shapes: [BaseShape; 3] = std::array::from_fn(|c| BaseShape::sample(kind, bands[c], cfg, rng));
    let duration = n_samples as f64 * delta;
    (0..n_samples)
        .map(|i| {
            let t = i as f64 * delta;
            Input::from_array(std::array::from_fn(|c| {
                shapes[c].value(t, duration).clamp(bands[c][0], bands[c][1])
            }))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputTrajectory {
    /// `total_n + 1` samples at spacing `delta`.
    pub samples: Vec<Input>,
    /// Start index of every segment followed by `samples.len()`.
    pub segment_boundaries: Vec<usize>,
    pub kinds: Vec<BaseSegmentKind>,
    pub seed: u64,
}

/// Concatenates `cfg.segments` base segments covering `total_n + 1` samples.
///
/// Segments have `total_n / segments` samples each; the remainder and the
/// terminal sample are appended to the last segment.
pub fn gen_input_trajectory(total_n: usize, delta: f64, cfg: &ExcitationConfig, seed: u64) -> Result<InputTrajectory> {
    let segments = cfg.segments;
    if total_n < segments {
        return Err(Error::config(
            "schedule",
            format!("horizon {total_n} shorter than {segments} segments"),
        ));
    }
    let mut rng = seed::rng_from(seed);
    let seg_len = total_n / segments;
    let mut samples = Vec::with_capacity(total_n + 1);
    let mut boundaries = Vec::with_capacity(segments + 1);
    let mut kinds = Vec::with_capacity(segments);
    for s in 0..segments {
        let len = if s + 1 == segments {
            total_n + 1 - seg_len * (segments - 1)
        } else {
            seg_len
        };
        let kind = BaseSegmentKind::sample(&mut rng);
        boundaries.push(samples.len());
        kinds.push(kind);
        samples.extend(gen_base_segment(kind, len, delta, cfg, &mut rng));
    }
    boundaries.push(samples.len());
    Ok(InputTrajectory {
        samples,
        segment_boundaries: boundaries,
        kinds,
        seed,
    })
}

pub fn sample_initial_condition(cfg: &ExcitationConfig, rng: &mut Rng) -> PlantState {
    let theta_max = cfg.theta_fraction * PI / 2.0;
    let rate = cfg.rate_bound;
    let sym = |rng: &mut Rng, a: f64| if a > 0.0 { rng.random_range(-a..=a) } else { 0.0 };
    let theta = sym(rng, theta_max);
    let psi = crate::plant::wrap_angle(rng.random_range(-PI..PI));
    let u = if cfg.surge_band[0] < cfg.surge_band[1] {
        rng.random_range(cfg.surge_band[0]..=cfg.surge_band[1])
    } else {
        cfg.surge_band[0]
    };
    let q = sym(rng, rate);
    let r = sym(rng, rate);
    let delta_uc = rng.random_range(0.0..=1.0);
    let delta_qc = rng.random_range(-1.0..=1.0);
    let delta_rc = rng.random_range(-1.0..=1.0);
    PlantState {
        theta,
        psi,
        u,
        q,
        r,
        delta_uc,
        delta_qc,
        delta_rc,
        ..PlantState::default()
    }
}

/// One sampled input/output trajectory with its truth states.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub inputs: Vec<Input>,
    pub outputs: Vec<Output>,
    pub states: Vec<PlantState>,
    pub input_seed: u64,
}

impl Trajectory {
    /// Number of integration steps (samples minus one).
    pub fn steps(&self) -> usize {
        self.outputs.len().saturating_sub(1)
    }

    pub fn simulate(x0: &PlantState, inputs: InputTrajectory, truth: &TruthParams, integ: &Integrator) -> Result<Self> {
        let n = inputs.samples.len() - 1;
        let states = integrate_truth(x0, &inputs.samples, truth, integ, n)?;
        let outputs: Vec<Output> = states.iter().map(output_map).collect();
        if let Some(k) = outputs.iter().position(|y| !y.in_admissible_set()) {
            return Err(Error::config(
                "excitation",
                format!("truth output left the admissible set at sample {k}: {:?}", outputs[k].0),
            ));
        }
        Ok(Self {
            inputs: inputs.samples,
            outputs,
            states,
            input_seed: inputs.seed,
        })
    }
}

/// Per-channel output mean and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; 8],
    pub std: [f64; 8],
}

impl NormStats {
    /// Population statistics over every sample of every trajectory.
    pub fn from_outputs<'a>(outputs: impl IntoIterator<Item = &'a Output>) -> Result<Self> {
        let mut count = 0usize;
        let mut sum = [0.0; 8];
        let mut sq = [0.0; 8];
        for y in outputs {
            count += 1;
            for c in 0..8 {
                sum[c] += y.0[c];
                sq[c] += y.0[c] * y.0[c];
            }
        }
        if count == 0 {
            return Err(Error::config("dataset", "no samples for normalization statistics"));
        }
        let n = count as f64;
        let mean: [f64; 8] = std::array::from_fn(|c| sum[c] / n);
        let std: [f64; 8] = std::array::from_fn(|c| (sq[c] / n - mean[c] * mean[c]).max(0.0).sqrt());
        let stats = Self { mean, std };
        stats.validate()?;
        Ok(stats)
    }

    pub fn validate(&self) -> Result<()> {
        for c in 0..8 {
            if !(self.std[c] > 0.0 && self.std[c].is_finite()) {
                return Err(Error::config(
                    format!("norm_std.{}", Output::NAMES[c]),
                    "standard deviation must be strictly positive",
                ));
            }
        }
        Ok(())
    }
}

/// Generation settings for a curriculum dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub seed: u64,
    pub schedule: Vec<usize>,
    pub delta: f64,
    pub substeps: usize,
    pub excitation: ExcitationConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            schedule: vec![100, 200, 400, 800, 1600],
            delta: 0.01,
            substeps: Integrator::default().substeps,
            excitation: ExcitationConfig::default(),
        }
    }
}

impl DatasetConfig {
    pub fn integrator(&self) -> Integrator {
        Integrator {
            delta: self.delta,
            substeps: self.substeps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schedule.is_empty() {
            return Err(Error::config("schedule", "must not be empty"));
        }
        if !(self.delta > 0.0) {
            return Err(Error::config("delta", "must be positive"));
        }
        if self.substeps == 0 {
            return Err(Error::config("substeps", "must be positive"));
        }
        self.excitation.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub batches: Vec<Trajectory>,
    pub initial_conditions: Vec<PlantState>,
    pub config: DatasetConfig,
    pub stats: NormStats,
}

impl Dataset {
    pub fn delta(&self) -> f64 {
        self.config.delta
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.batches.iter().map(Trajectory::steps).collect()
    }
}

/// Simulates one trajectory of `n` steps from a fresh initial condition.
pub fn simulate_random_trajectory(
    n: usize,
    ic_rng: &mut Rng,
    input_seed: u64,
    truth: &TruthParams,
    cfg: &DatasetConfig,
) -> Result<(PlantState, Trajectory)> {
    let x0 = sample_initial_condition(&cfg.excitation, ic_rng);
    let inputs = gen_input_trajectory(n, cfg.delta, &cfg.excitation, input_seed)?;
    let traj = Trajectory::simulate(&x0, inputs, truth, &cfg.integrator())?;
    Ok((x0, traj))
}

/// Builds one trajectory per schedule entry, each from its own RNG stream.
pub fn build_dataset(truth: &TruthParams, cfg: &DatasetConfig) -> Result<Dataset> {
    cfg.validate()?;
    truth.validate()?;
    let results: Vec<Result<(PlantState, Trajectory)>> = cfg
        .schedule
        .par_iter()
        .enumerate()
        .map(|(i, &n)| {
            let mut ic_rng = seed::rng(cfg.seed, "dataset-ic", i as u64);
            let input_seed = seed::derive(cfg.seed, "dataset-input", i as u64);
            simulate_random_trajectory(n, &mut ic_rng, input_seed, truth, cfg).map_err(|e| Error::Batch {
                batch: i,
                source: Box::new(e),
            })
        })
        .collect();
    let mut batches = Vec::with_capacity(results.len());
    let mut ics = Vec::with_capacity(results.len());
    for r in results {
        let (x0, t) = r?;
        ics.push(x0);
        batches.push(t);
    }
    let stats = NormStats::from_outputs(batches.iter().flat_map(|b| b.outputs.iter()))?;
    Ok(Dataset {
        batches,
        initial_conditions: ics,
        config: cfg.clone(),
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ExcitationConfig {
        ExcitationConfig::default()
    }

    #[test]
    fn step_segment_is_constant_in_band() {
        let mut rng = seed::rng_from(3);
        let seg = gen_base_segment(BaseSegmentKind::Step, 40, 0.01, &cfg(), &mut rng);
        assert!(seg.iter().all(|s| s.delta_u == seg[0].delta_u));
        assert!((0.0..=1.0).contains(&seg[0].delta_u));
    }

    #[test]
    fn zero_amplitude_periodic_is_constant() {
        let shape = BaseShape::Periodic {
            offset: 0.3,
            amplitude: 0.0,
            frequency: 0.2,
            phase: 1.0,
        };
        for i in 0..100 {
            assert_eq!(shape.value(i as f64 * 0.01, 1.0), 0.3);
        }
    }

    #[test]
    fn spline_passes_through_knots() {
        let shape = BaseShape::Spline {
            knots: vec![0.1, -0.4, 0.7, 0.2],
        };
        for (j, k) in [0.1, -0.4, 0.7, 0.2].iter().enumerate() {
            assert!((shape.value(j as f64, 3.0) - k).abs() < 1e-12);
        }
    }

    #[test]
    fn segment_arithmetic() {
        let t = gen_input_trajectory(100, 0.01, &cfg(), 9).unwrap();
        assert_eq!(t.samples.len(), 101);
        assert_eq!(t.kinds.len(), 50);
        assert_eq!(t.segment_boundaries.len(), 51);
        for w in t.segment_boundaries.windows(2).take(49) {
            assert_eq!(w[1] - w[0], 2);
        }
        assert_eq!(*t.segment_boundaries.last().unwrap(), 101);
    }

    #[test]
    fn uneven_horizon_pads_last_segment() {
        let t = gen_input_trajectory(123, 0.01, &cfg(), 9).unwrap();
        assert_eq!(t.samples.len(), 124);
        let b = &t.segment_boundaries;
        assert_eq!(b[49], 49 * 2);
        assert_eq!(b[50] - b[49], 124 - 98);
    }

    #[test]
    fn too_short_horizon_rejected() {
        assert!(gen_input_trajectory(10, 0.01, &cfg(), 1).is_err());
    }

    #[test]
    fn identical_seeds_identical_trajectories() {
        let a = gen_input_trajectory(200, 0.01, &cfg(), 42).unwrap();
        let b = gen_input_trajectory(200, 0.01, &cfg(), 42).unwrap();
        assert_eq!(a, b);
        let c = gen_input_trajectory(200, 0.01, &cfg(), 43).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn initial_condition_construction() {
        let mut rng = seed::rng_from(5);
        for _ in 0..1000 {
            let x = sample_initial_condition(&cfg(), &mut rng);
            assert_eq!((x.w, x.p_x, x.p_y, x.p_z), (0.0, 0.0, 0.0, 0.0));
            assert!(output_map(&x).in_admissible_set());
        }
    }

    #[test]
    fn single_batch_dataset() {
        let c = DatasetConfig {
            schedule: vec![100],
            ..Default::default()
        };
        let d = build_dataset(&TruthParams::default(), &c).unwrap();
        assert_eq!(d.batches.len(), 1);
        assert_eq!(d.batches[0].outputs.len(), 101);
        assert_eq!(d.lengths(), vec![100]);
    }

    #[test]
    fn zero_std_rejected() {
        let ys = vec![Output([0.0; 8]); 5];
        assert!(matches!(NormStats::from_outputs(&ys), Err(Error::Config { .. })));
    }
}
