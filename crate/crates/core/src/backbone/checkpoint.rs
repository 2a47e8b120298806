//! Checkpoint directory: `manifest.json` (format version, config, ordered
//! tensor index) and `weights.bin` (every tensor as little-endian f64, in
//! manifest order, no padding).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::BackboneConfig;
use super::model::Backbone;
use crate::error::{Error, Result};
use crate::numerics::{Parameter, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub config: BackboneConfig,
    pub tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(backbone: &Backbone, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = Manifest {
        version: CHECKPOINT_VERSION,
        config: backbone.config,
        tensors: backbone
            .params()
            .iter()
            .map(|p| TensorEntry { name: p.name.clone(), shape: p.tensor.shape().to_vec(), trainable: p.trainable })
            .collect(),
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    let mut bytes = Vec::new();
    for p in backbone.params() {
        for v in p.tensor.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(dir.join(WEIGHTS_FILE), bytes)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Backbone> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", manifest.version)));
    }
    let bytes = fs::read(dir.join(WEIGHTS_FILE))?;
    let expected: usize = manifest.tensors.iter().map(|t| t.shape.iter().product::<usize>() * 8).sum();
    if bytes.len() != expected {
        return Err(Error::Checkpoint(format!("weights.bin has {} bytes, manifest needs {expected}", bytes.len())));
    }
    let mut offset = 0;
    let mut params = Vec::with_capacity(manifest.tensors.len());
    for entry in &manifest.tensors {
        let n: usize = entry.shape.iter().product();
        let data = bytes[offset..offset + 8 * n]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        offset += 8 * n;
        params.push(Parameter::new(entry.name.clone(), Tensor::new(entry.shape.clone(), data)?, entry.trainable));
    }
    Backbone::from_params(manifest.config, params)
}
