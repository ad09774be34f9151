//! Checkpoint directory layout: `manifest.json` (names, shapes, stage
//! provenance, model config, dtype) plus `params.bin`, the concatenation of
//! every parameter tensor in manifest order. Reload is bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::tensor::{io as tio, Dtype, Scalar, Tensor};
use crate::unet::ModelConfig;

use super::{Result, TrainError};

pub const PARAMS_FILE: &str = "params.bin";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointManifest {
    format: String,
    dtype: String,
    stages: Vec<String>,
    config: ModelConfig,
    params: Vec<ParamEntry>,
}

/// An in-memory checkpoint: model config, stage provenance, parameters.
#[derive(Clone)]
pub struct CheckpointData<S: Scalar> {
    pub config: ModelConfig,
    pub stages: Vec<String>,
    pub params: BTreeMap<String, Tensor<S>>,
}

pub fn save_checkpoint<S: Scalar>(dir: &Path, ckpt: &CheckpointData<S>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(ckpt.params.len());
    let mut blob = Vec::new();
    for (name, tensor) in &ckpt.params {
        entries.push(ParamEntry {
            name: name.clone(),
            shape: tensor.shape().to_vec(),
        });
        tio::write_tensor(&mut blob, tensor)?;
    }
    let manifest = CheckpointManifest {
        format: "mctl-checkpoint-v1".to_string(),
        dtype: S::DTYPE.name().to_string(),
        stages: ckpt.stages.clone(),
        config: ckpt.config.clone(),
        params: entries,
    };
    fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    fs::write(dir.join(PARAMS_FILE), blob)?;
    Ok(())
}

pub fn load_checkpoint<S: Scalar>(dir: &Path) -> Result<CheckpointData<S>> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))
        .map_err(|e| TrainError::MissingParent(format!("{}: {e}", dir.display())))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| TrainError::Corrupt(e.to_string()))?;
    if manifest.format != "mctl-checkpoint-v1" {
        return Err(TrainError::Corrupt(format!(
            "unknown checkpoint format `{}`",
            manifest.format
        )));
    }
    let dtype = Dtype::from_name(&manifest.dtype).map_err(|e| TrainError::Corrupt(e.to_string()))?;
    if dtype != S::DTYPE {
        return Err(TrainError::Corrupt(format!(
            "checkpoint holds {} values, expected {}",
            manifest.dtype,
            S::DTYPE.name()
        )));
    }
    let blob = fs::read(dir.join(PARAMS_FILE))?;
    let mut cursor = &blob[..];
    let mut params = BTreeMap::new();
    for entry in &manifest.params {
        let tensor: Tensor<S> = tio::read_tensor(&mut cursor, dtype)
            .map_err(|e| TrainError::Corrupt(format!("param `{}`: {e}", entry.name)))?;
        if tensor.shape() != entry.shape.as_slice() {
            return Err(TrainError::Corrupt(format!(
                "param `{}`: shape {:?} vs manifest {:?}",
                entry.name,
                tensor.shape(),
                entry.shape
            )));
        }
        params.insert(entry.name.clone(), tensor);
    }
    if !cursor.is_empty() {
        return Err(TrainError::Corrupt(format!(
            "{} trailing bytes in {PARAMS_FILE}",
            cursor.len()
        )));
    }
    Ok(CheckpointData {
        config: manifest.config,
        stages: manifest.stages,
        params,
    })
}

/// Hex SHA-256 of the serialized parameter blob; used by reproducibility
/// checks.
pub fn checkpoint_hash(dir: &Path) -> Result<String> {
    let blob = fs::read(dir.join(PARAMS_FILE))?;
    Ok(crate::synthdata::hex_digest(&blob))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::unet::UNet;

    fn tiny_config() -> ModelConfig {
        serde_json::from_value(serde_json::json!({
            "frames": 2, "height": 8, "width": 8,
            "base_channels": 8, "channel_mults": [1, 2], "heads": 2,
            "vocab_size": 22, "text_embed_dim": 8, "timesteps": 20
        }))
        .unwrap()
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let cfg = tiny_config();
        let model = UNet::<f32>::init(&cfg, 3).unwrap();
        let ckpt = CheckpointData {
            config: cfg.clone(),
            stages: vec!["base".to_string()],
            params: model.param_map(),
        };
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &ckpt).unwrap();
        let back: CheckpointData<f32> = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back.stages, ckpt.stages);
        assert_eq!(back.params.len(), ckpt.params.len());
        for (name, tensor) in &ckpt.params {
            assert_eq!(back.params[name].data(), tensor.data(), "{name}");
        }
        // Saving the loaded checkpoint reproduces the same bytes.
        let dir2 = tempfile::tempdir().unwrap();
        save_checkpoint(dir2.path(), &back).unwrap();
        let a = std::fs::read(dir.path().join(PARAMS_FILE)).unwrap();
        let b = std::fs::read(dir2.path().join(PARAMS_FILE)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dtype_mismatch_is_rejected() {
        let cfg = tiny_config();
        let model = UNet::<f32>::init(&cfg, 3).unwrap();
        let ckpt = CheckpointData {
            config: cfg,
            stages: vec![],
            params: model.param_map(),
        };
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &ckpt).unwrap();
        assert!(load_checkpoint::<f64>(dir.path()).is_err());
    }
}
