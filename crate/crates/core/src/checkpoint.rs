//! Versioned JSON checkpoints for trained squeezers.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::config_hash;
use crate::error::{NisError, Result};
use crate::networks::{Bijector, Mlp};
use crate::rng::stream;
use crate::squeezer::{EpochRecord, ModelConfig, NisModel, TrainConfig, TrainedModel};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub p: usize,
    pub q: usize,
    pub arch: ModelConfig,
    pub train_config: TrainConfig,
    pub train_loss: Option<f64>,
    pub val_loss: Option<f64>,
    pub best_epoch: usize,
    /// Per-dimension macro residual variances from the validation split.
    pub sigma2: Option<Vec<f64>>,
    #[serde(default)]
    pub history: Vec<EpochRecord>,
    pub params: BTreeMap<String, NamedTensor>,
}

impl Checkpoint {
    pub fn from_trained(trained: &TrainedModel, cfg: &TrainConfig) -> Self {
        let mut ckpt = Self::from_model(&trained.model, cfg);
        ckpt.train_loss = Some(trained.outcome.train_loss);
        ckpt.val_loss = Some(trained.outcome.val_loss);
        ckpt.best_epoch = trained.outcome.best_epoch;
        ckpt.sigma2 = Some(trained.sigma2.clone());
        ckpt.history = trained.outcome.history.clone();
        ckpt
    }

    /// Snapshot of an (untrained or externally trained) model without
    /// losses or residual variances.
    pub fn from_model(model: &NisModel, cfg: &TrainConfig) -> Self {
        let params = model
            .param_names()
            .into_iter()
            .zip(model.params())
            .map(|(name, t)| {
                (
                    name,
                    NamedTensor {
                        shape: t.shape().to_vec(),
                        data: t.data().to_vec(),
                    },
                )
            })
            .collect();
        let arch = model.arch();
        Self {
            schema_version: SCHEMA_VERSION,
            tool_version: crate::TOOL_VERSION.to_string(),
            config_hash: config_hash(&(model.p(), model.q(), arch, cfg)),
            seed: cfg.seed,
            p: model.p(),
            q: model.q(),
            arch,
            train_config: cfg.clone(),
            train_loss: None,
            val_loss: None,
            best_epoch: 0,
            sigma2: None,
            history: Vec::new(),
            params,
        }
    }

    /// Rebuilds the model, checking every named tensor against the
    /// architecture.
    pub fn to_model(&self) -> Result<NisModel> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(NisError::Parse(format!(
                "unsupported checkpoint schema {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        // Build a skeleton with the right shapes, then overwrite every tensor.
        let mut rng = stream(0, "checkpoint/skeleton");
        let bijector = Bijector::new(self.p, self.arch.blocks, self.arch.hidden, &mut rng)?;
        let dynamics = Mlp::zeros(self.q, self.arch.hidden, self.q);
        let mut model = NisModel::from_parts(bijector, self.q, dynamics, self.train_config.norm)?;
        let names = model.param_names();
        if names.len() != self.params.len() {
            return Err(NisError::Parse(format!(
                "checkpoint holds {} tensors, architecture needs {}",
                self.params.len(),
                names.len()
            )));
        }
        for (name, slot) in names.iter().zip(model.params_mut()) {
            let stored = self
                .params
                .get(name)
                .ok_or_else(|| NisError::Parse(format!("checkpoint is missing tensor {name}")))?;
            if stored.shape != slot.shape() {
                return Err(NisError::Parse(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    stored.shape,
                    slot.shape()
                )));
            }
            *slot = Tensor::new(stored.shape.clone(), stored.data.clone())?;
        }
        Ok(model)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let r = BufReader::new(File::open(path)?);
        Ok(serde_json::from_reader(r)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::squeezer::Norm;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut model = NisModel::new(4, 2, ModelConfig { hidden: 8, blocks: 2 }, Norm::L2, 9).unwrap();
        model.bijector_mut().randomize(0.7, &mut stream(1, "t"));
        let cfg = TrainConfig::default();
        let mut ckpt = Checkpoint::from_model(&model, &cfg);
        ckpt.sigma2 = Some(vec![1.0 / 3.0, 2e-7]);
        ckpt.train_loss = Some(0.1 + 0.2);
        ckpt.val_loss = Some(1e-300);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        ckpt.write(&path).unwrap();
        let back = Checkpoint::read(&path).unwrap();
        assert_eq!(back, ckpt);

        let rebuilt = back.to_model().unwrap();
        for (a, b) in rebuilt.params().iter().zip(model.params()) {
            assert_eq!(a.data(), b.data());
        }
        let x = [0.3, -0.1, 0.7, 1.2];
        assert_eq!(rebuilt.encode(&x).unwrap(), model.encode(&x).unwrap());
    }

    #[test]
    fn hash_depends_on_config() {
        let a = TrainConfig::default();
        let b = TrainConfig { seed: 1, ..a.clone() };
        assert_ne!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a), config_hash(&a.clone()));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let model = NisModel::new(3, 1, ModelConfig { hidden: 4, blocks: 1 }, Norm::L2, 0).unwrap();
        let mut ckpt = Checkpoint::from_model(&model, &TrainConfig::default());
        let first = ckpt.params.keys().next().unwrap().clone();
        ckpt.params.get_mut(&first).unwrap().shape = vec![1, 1];
        assert!(ckpt.to_model().is_err());
    }
}
