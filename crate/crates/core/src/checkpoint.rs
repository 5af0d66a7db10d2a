//! Versioned binary checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! | offset      | size     | content                                   |
//! |-------------|----------|-------------------------------------------|
//! | 0           | 8        | magic `AUVCKPT\0`                         |
//! | 8           | 4        | format version (u32, currently 1)         |
//! | 12          | 4        | header length `H` (u32)                   |
//! | 16          | H        | UTF-8 JSON header                         |
//! | 16 + H      | 8 * P    | MLP parameters, flat per-layer row-major W then b |
//! | ...         | 8 * 2T   | Adam-W first then second moments (only if `optimizer` is set) |
//! | end - 32    | 32       | SHA-256 of every preceding byte           |
//!
//! `P` is the header's `n_mlp_params` (zero for graybox) and `T` its
//! `n_trainable`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::models::{GrayboxParams, MlpScaling, ModelVariant, TrainableModel};
use crate::ndiff::{Activation, AdamWConfig, AdamWState, Mlp, SpectralBounds};
use crate::train::{RunStatus, TrainRun};

pub const MAGIC: &[u8; 8] = b"AUVCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerHeader {
    pub config: AdamWConfig,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub crate_version: String,
    pub config_hash: String,
    pub variant: ModelVariant,
    pub instance: usize,
    pub master_seed: u64,
    pub status: RunStatus,
    pub epochs_run: usize,
    pub wall_ms: f64,
    pub layer_dims: Option<Vec<usize>>,
    pub activation: Option<Activation>,
    pub bounds: Option<SpectralBounds>,
    pub graybox: Option<GrayboxParams>,
    pub scaling: MlpScaling,
    pub optimizer: Option<OptimizerHeader>,
    pub n_mlp_params: usize,
    pub n_trainable: usize,
}

/// A trained model plus what is needed to resume or audit it. The epoch
/// history lives in the run log, not here.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: TrainableModel,
    pub optimizer: Option<AdamWState>,
}

impl Checkpoint {
    pub fn from_run(run: &TrainRun, config_hash: &str) -> Self {
        let mlp = run.model.mlp.as_ref();
        Self {
            header: CheckpointHeader {
                crate_version: env!("CARGO_PKG_VERSION").to_string(),
                config_hash: config_hash.to_string(),
                variant: run.variant,
                instance: run.instance,
                master_seed: run.master_seed,
                status: run.status.clone(),
                epochs_run: run.history.len(),
                wall_ms: run.wall_ms,
                layer_dims: mlp.map(|m| m.dims().to_vec()),
                activation: mlp.map(Mlp::activation),
                bounds: run.model.bounds,
                graybox: run.model.graybox,
                scaling: run.model.scaling,
                optimizer: run.optimizer.as_ref().map(|o| OptimizerHeader {
                    config: o.config,
                    step: o.step,
                }),
                n_mlp_params: mlp.map_or(0, Mlp::n_params),
                n_trainable: run.model.n_trainable(),
            },
            model: run.model.clone(),
            optimizer: run.optimizer.clone(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header).map_err(|e| Error::Shape(e.to_string()))?;
        let mut out = Vec::with_capacity(64 + header.len() + 8 * 3 * self.header.n_trainable);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        let mlp_params = self.model.mlp.as_ref().map_or(&[][..], Mlp::params);
        for v in mlp_params {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(o) = &self.optimizer {
            for v in o.m.iter().chain(&o.v) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::parse(path, reason);
        if bytes.len() < 16 + 32 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("checksum mismatch"));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::parse(path, format!("unsupported checkpoint version {version}")));
        }
        let hlen = u32::from_le_bytes(body[12..16].try_into().unwrap()) as usize;
        let hend = 16usize
            .checked_add(hlen)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| bad("truncated header"))?;
        let header: CheckpointHeader = serde_json::from_slice(&body[16..hend]).map_err(|e| Error::parse(path, e))?;
        let floats: Vec<f64> = body[hend..]
            .chunks(8)
            .map(|c| c.try_into().map(f64::from_le_bytes))
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad("payload is not a whole number of f64"))?;
        let n_opt = if header.optimizer.is_some() {
            2 * header.n_trainable
        } else {
            0
        };
        if floats.len() != header.n_mlp_params + n_opt {
            return Err(bad("payload length does not match header"));
        }
        let mlp = match (&header.layer_dims, header.activation) {
            (Some(dims), Some(act)) => Some(Mlp::from_params(dims, act, floats[..header.n_mlp_params].to_vec())?),
            (None, None) => None,
            _ => return Err(bad("layer_dims and activation must both be present or absent")),
        };
        let model =
            TrainableModel::new(header.variant, mlp, header.graybox, header.bounds)?.with_scaling(header.scaling)?;
        if model.n_trainable() != header.n_trainable {
            return Err(bad("n_trainable does not match the model"));
        }
        let optimizer = header.optimizer.as_ref().map(|o| {
            let rest = &floats[header.n_mlp_params..];
            AdamWState {
                config: o.config,
                step: o.step,
                m: rest[..header.n_trainable].to_vec(),
                v: rest[header.n_trainable..].to_vec(),
            }
        });
        Ok(Self {
            header,
            model,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn is_completed(&self) -> bool {
        self.header.status.is_completed()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ParamErrorLevel;
    use crate::plant::TruthParams;
    use crate::train::{initialize_model, TrainConfig};

    fn run(variant: ModelVariant) -> TrainRun {
        let cfg = TrainConfig {
            hidden: vec![6, 5],
            ..Default::default()
        };
        let mut scaling = MlpScaling::identity();
        scaling.input_shift[3] = 0.25;
        scaling.output_gain[7] = 9.5;
        let model = initialize_model(variant, &TruthParams::default(), &cfg, 9, 2, scaling).unwrap();
        let n = model.n_trainable();
        let mut opt = AdamWState::new(cfg.optimizer, n);
        opt.step = 17;
        opt.m
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = i as f64 * 0.1 - 1.0);
        opt.v
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = (i as f64).sqrt() * 1e-7);
        TrainRun {
            variant,
            instance: 2,
            master_seed: u64::MAX,
            history: Vec::new(),
            status: RunStatus::Diverged {
                batch: 1,
                epoch: 3,
                message: "x".into(),
            },
            model,
            optimizer: Some(opt),
            wall_ms: 12.5,
        }
    }

    #[test]
    fn round_trip_all_families() {
        for v in [
            ModelVariant::Blackbox,
            ModelVariant::Graybox,
            ModelVariant::Hybrid(ParamErrorLevel::new(0.3).unwrap()),
        ] {
            let r = run(v);
            let ck = Checkpoint::from_run(&r, "abc");
            let bytes = ck.to_bytes().unwrap();
            let back = Checkpoint::from_bytes(&bytes, Path::new("x")).unwrap();
            assert_eq!(back, ck);
            assert_eq!(back.model, r.model);
            assert_eq!(back.optimizer, r.optimizer);
        }
    }

    #[test]
    fn layout_prefix() {
        let bytes = Checkpoint::from_run(&run(ModelVariant::Blackbox), "h")
            .to_bytes()
            .unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let mlp = run(ModelVariant::Blackbox).model.mlp.unwrap();
        let first = f64::from_le_bytes(bytes[16 + hlen..24 + hlen].try_into().unwrap());
        assert_eq!(first, mlp.params()[0]);
        assert_eq!(bytes.len(), 16 + hlen + 8 * 3 * mlp.n_params() + 32);
    }

    #[test]
    fn corruption_detected() {
        let mut bytes = Checkpoint::from_run(&run(ModelVariant::Blackbox), "h")
            .to_bytes()
            .unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(Checkpoint::from_bytes(&bytes, Path::new("x")).is_err());
        assert!(Checkpoint::from_bytes(b"nope", Path::new("x")).is_err());
    }
}
