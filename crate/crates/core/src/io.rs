//! On-disk formats: trajectory CSVs, dataset and test-set directories with a
//! key-value `meta` file, and the tab-separated training log.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::{TestSet, TestSetConfig};
use crate::excitation::{Dataset, DatasetConfig, ExcitationConfig, NormStats, Trajectory};
use crate::plant::{Input, Output, PlantState, TruthParams};
use crate::train::EpochRecord;

pub const TRAJECTORY_HEADER: &str = "t,du,dq,dr,theta,psi,u,q,r,duc,dqc,drc";
pub const STATE_COLUMNS: &str = "px,py,pz,w";
pub const META_FILE: &str = "meta";
pub const TRUTH_FILE: &str = "truth_params.toml";
const FORMAT_VERSION: u32 = 1;

/// Writes through a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// CSV rendering of a trajectory. Floats use the shortest representation
/// that round-trips; time is fixed at 6 decimals.
pub fn trajectory_csv(traj: &Trajectory, delta: f64, with_states: bool) -> String {
    let mut s = String::with_capacity(traj.outputs.len() * 200);
    s.push_str(TRAJECTORY_HEADER);
    if with_states {
        s.push(',');
        s.push_str(STATE_COLUMNS);
    }
    s.push('\n');
    for (k, y) in traj.outputs.iter().enumerate() {
        let u = traj.inputs[k].to_array();
        let _ = write!(s, "{:.6}", k as f64 * delta);
        for v in u.iter().chain(y.0.iter()) {
            let _ = write!(s, ",{v}");
        }
        if with_states {
            let x = &traj.states[k];
            let _ = write!(s, ",{},{},{},{}", x.p_x, x.p_y, x.p_z, x.w);
        }
        s.push('\n');
    }
    s
}

pub fn write_trajectory(path: &Path, traj: &Trajectory, delta: f64, with_states: bool) -> Result<()> {
    write_atomic(path, trajectory_csv(traj, delta, with_states).as_bytes())
}

/// Reads a trajectory CSV. Without the state columns the unmeasured states
/// are zero.
pub fn read_trajectory(path: &Path, input_seed: u64) -> Result<Trajectory> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::parse(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let joined = header.join(",");
    let with_states = if joined == TRAJECTORY_HEADER {
        false
    } else if joined == format!("{TRAJECTORY_HEADER},{STATE_COLUMNS}") {
        true
    } else {
        return Err(Error::parse(path, format!("unexpected header `{joined}`")));
    };
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    let mut states = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(path, e))?;
        let vals = rec
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::parse(path, format!("row {}: {e}", line + 1)))?;
        if vals.len() != header.len() {
            return Err(Error::parse(
                path,
                format!("row {} has {} fields", line + 1, vals.len()),
            ));
        }
        let u = Input::new(vals[1], vals[2], vals[3]);
        let y = Output(std::array::from_fn(|c| vals[4 + c]));
        let mut x = PlantState::lift(&y);
        if with_states {
            x.p_x = vals[12];
            x.p_y = vals[13];
            x.p_z = vals[14];
            x.w = vals[15];
        }
        inputs.push(u);
        outputs.push(y);
        states.push(x);
    }
    if outputs.is_empty() {
        return Err(Error::parse(path, "no samples"));
    }
    Ok(Trajectory {
        inputs,
        outputs,
        states,
        input_seed,
    })
}

/// u64 values go through TOML as decimal strings (TOML integers are i64).
mod seed_str {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

mod seeds_str {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|x| x.to_string()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u64>, D::Error> {
        Vec::<String>::deserialize(d)?
            .iter()
            .map(|s| s.parse().map_err(serde::de::Error::custom))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub format_version: u32,
    #[serde(with = "seed_str")]
    pub seed: u64,
    pub delta: f64,
    pub substeps: usize,
    pub schedule: Vec<usize>,
    #[serde(with = "seeds_str")]
    pub input_seeds: Vec<u64>,
    pub norm_mean: [f64; 8],
    pub norm_std: [f64; 8],
    pub excitation: ExcitationConfig,
}

fn batch_file(i: usize) -> String {
    format!("batch_{i}.csv")
}

fn check_version(path: &Path, v: u32) -> Result<()> {
    if v != FORMAT_VERSION {
        return Err(Error::parse(path, format!("unsupported format_version {v}")));
    }
    Ok(())
}

fn to_toml<T: Serialize>(v: &T, path: &Path) -> Result<String> {
    toml::to_string(v).map_err(|e| Error::parse(path, e))
}

fn from_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    toml::from_str(&read_string(path)?).map_err(|e| Error::parse(path, e))
}

/// Writes `batch_<i>.csv` with truth states, `meta` and the truth parameters.
pub fn write_dataset(dir: &Path, ds: &Dataset, truth: &TruthParams) -> Result<()> {
    for (i, b) in ds.batches.iter().enumerate() {
        write_trajectory(&dir.join(batch_file(i)), b, ds.delta(), true)?;
    }
    let meta = DatasetMeta {
        format_version: FORMAT_VERSION,
        seed: ds.config.seed,
        delta: ds.config.delta,
        substeps: ds.config.substeps,
        schedule: ds.config.schedule.clone(),
        input_seeds: ds.batches.iter().map(|b| b.input_seed).collect(),
        norm_mean: ds.stats.mean,
        norm_std: ds.stats.std,
        excitation: ds.config.excitation.clone(),
    };
    let path = dir.join(META_FILE);
    write_atomic(&dir.join(TRUTH_FILE), to_toml(truth, &dir.join(TRUTH_FILE))?.as_bytes())?;
    write_atomic(&path, to_toml(&meta, &path)?.as_bytes())
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join(META_FILE);
    let meta: DatasetMeta = from_toml(&path)?;
    check_version(&path, meta.format_version)?;
    if meta.input_seeds.len() != meta.schedule.len() {
        return Err(Error::parse(&path, "input_seeds and schedule differ in length"));
    }
    let mut batches = Vec::with_capacity(meta.schedule.len());
    for (i, (&n, &s)) in meta.schedule.iter().zip(&meta.input_seeds).enumerate() {
        let p = dir.join(batch_file(i));
        let t = read_trajectory(&p, s)?;
        if t.steps() != n {
            return Err(Error::parse(&p, format!("{} steps, meta says {n}", t.steps())));
        }
        batches.push(t);
    }
    let stats = NormStats {
        mean: meta.norm_mean,
        std: meta.norm_std,
    };
    stats.validate()?;
    Ok(Dataset {
        initial_conditions: batches.iter().map(|b| b.states[0]).collect(),
        batches,
        config: DatasetConfig {
            seed: meta.seed,
            schedule: meta.schedule,
            delta: meta.delta,
            substeps: meta.substeps,
            excitation: meta.excitation,
        },
        stats,
    })
}

pub fn read_truth_params(path: &Path) -> Result<TruthParams> {
    let p: TruthParams = from_toml(path)?;
    p.validate()?;
    Ok(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSetMeta {
    pub format_version: u32,
    #[serde(with = "seed_str")]
    pub seed: u64,
    pub delta: f64,
    pub n_inputs: usize,
    pub n_initial: usize,
    pub steps: usize,
    #[serde(with = "seeds_str")]
    pub input_seeds: Vec<u64>,
}

fn test_file(k: usize) -> String {
    format!("traj_{k}.csv")
}

pub fn write_test_set(dir: &Path, test: &TestSet) -> Result<()> {
    for (k, t) in test.trajectories.iter().enumerate() {
        write_trajectory(&dir.join(test_file(k)), t, test.delta, true)?;
    }
    let meta = TestSetMeta {
        format_version: FORMAT_VERSION,
        seed: test.seed,
        delta: test.delta,
        n_inputs: test.config.n_inputs,
        n_initial: test.config.n_initial,
        steps: test.config.steps,
        input_seeds: test.trajectories.iter().map(|t| t.input_seed).collect(),
    };
    let path = dir.join(META_FILE);
    write_atomic(&path, to_toml(&meta, &path)?.as_bytes())
}

pub fn read_test_set(dir: &Path) -> Result<TestSet> {
    let path = dir.join(META_FILE);
    let meta: TestSetMeta = from_toml(&path)?;
    check_version(&path, meta.format_version)?;
    let n = meta.n_inputs * meta.n_initial;
    if meta.input_seeds.len() != n {
        return Err(Error::parse(&path, "input_seeds does not match n_inputs * n_initial"));
    }
    let trajectories = (0..n)
        .map(|k| read_trajectory(&dir.join(test_file(k)), meta.input_seeds[k]))
        .collect::<Result<Vec<_>>>()?;
    if let Some(t) = trajectories.iter().find(|t| t.steps() != meta.steps) {
        return Err(Error::parse(
            &path,
            format!("trajectory with {} steps, meta says {}", t.steps(), meta.steps),
        ));
    }
    Ok(TestSet {
        seed: meta.seed,
        config: TestSetConfig {
            n_inputs: meta.n_inputs,
            n_initial: meta.n_initial,
            steps: meta.steps,
        },
        delta: meta.delta,
        initial_conditions: trajectories[..meta.n_initial].iter().map(|t| t.states[0]).collect(),
        trajectories,
    })
}

pub const RUN_LOG_HEADER: &str = "batch\tepoch\tloss\tpenalty\tgrad_norm\twall_ms";

pub fn run_log(history: &[EpochRecord]) -> String {
    let mut s = String::from(RUN_LOG_HEADER);
    s.push('\n');
    for r in history {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{:.3}",
            r.batch, r.epoch, r.loss, r.penalty, r.grad_norm, r.wall_ms
        );
    }
    s
}
