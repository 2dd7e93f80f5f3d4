//! Checkpoint format: a versioned JSON manifest (config, array shapes, seed,
//! epoch, frozen rows) next to a flat little-endian f32 blob holding every
//! array in manifest order. Gate order inside LSTM arrays is input, forget,
//! cell, output.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, NetworkParams, NeuralError};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub version: u32,
    pub config: ModelConfig,
    pub seed: u64,
    pub epoch: usize,
    pub config_hash: String,
    pub frozen_rows: Vec<bool>,
    pub arrays: Vec<ArrayEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

fn blob_path(manifest_path: &Path) -> std::path::PathBuf {
    manifest_path.with_extension("bin")
}

/// Writes `<path>.json` and `<path>.bin`.
pub fn save_checkpoint(
    path: &Path,
    params: &NetworkParams,
    config: &ModelConfig,
    seed: u64,
    epoch: usize,
    config_hash: &str,
) -> Result<(), NeuralError> {
    let manifest_path = path.with_extension("json");
    let arrays = params
        .manifest()
        .into_iter()
        .map(|(name, shape)| ArrayEntry { name, shape })
        .collect();
    let meta = CheckpointMeta {
        version: CHECKPOINT_VERSION,
        config: config.clone(),
        seed,
        epoch,
        config_hash: config_hash.to_string(),
        frozen_rows: params.frozen_rows.clone(),
        arrays,
    };
    fs::write(&manifest_path, serde_json::to_string_pretty(&meta)?)?;
    let flat = params.flatten();
    let mut blob = Vec::with_capacity(flat.len() * 4);
    for x in flat {
        blob.extend_from_slice(&(x as f32).to_le_bytes());
    }
    fs::write(blob_path(&manifest_path), blob)?;
    Ok(())
}

/// Loads a checkpoint written by `save_checkpoint`. `path` may point at the
/// manifest or carry no extension.
pub fn load_checkpoint(path: &Path) -> Result<(NetworkParams, CheckpointMeta), NeuralError> {
    let manifest_path = path.with_extension("json");
    let meta: CheckpointMeta = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
    if meta.version != CHECKPOINT_VERSION {
        return Err(NeuralError::Checkpoint(format!(
            "unsupported checkpoint version {}",
            meta.version
        )));
    }
    meta.config.validate()?;
    let mut params = NetworkParams::zeros(&meta.config);
    if meta.frozen_rows.len() != params.frozen_rows.len() {
        return Err(NeuralError::Checkpoint(
            "frozen_rows length does not match class count".into(),
        ));
    }
    params.frozen_rows = meta.frozen_rows.clone();
    let expected = params.manifest();
    if expected.len() != meta.arrays.len() {
        return Err(NeuralError::Checkpoint(format!(
            "manifest lists {} arrays, config implies {}",
            meta.arrays.len(),
            expected.len()
        )));
    }
    for ((name, shape), entry) in expected.iter().zip(&meta.arrays) {
        if *name != entry.name || *shape != entry.shape {
            return Err(NeuralError::Checkpoint(format!(
                "array {} has shape {:?}, expected {} {:?}",
                entry.name, entry.shape, name, shape
            )));
        }
    }
    let blob = fs::read(blob_path(&manifest_path))?;
    let n = params.num_params();
    if blob.len() != n * 4 {
        return Err(NeuralError::Checkpoint(format!(
            "blob holds {} bytes, expected {}",
            blob.len(),
            n * 4
        )));
    }
    let flat: Vec<f64> = blob
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    params.assign_from_flat(&flat);
    Ok((params, meta))
}
