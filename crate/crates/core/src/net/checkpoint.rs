//! Checkpoints: a directory holding `manifest.json` and `weights.bin`
//! (all tensors, slot order, little-endian `f32`).

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{NetConfig, NetworkParams};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub step: usize,
    pub config: NetConfig,
    pub tensors: Vec<TensorEntry>,
}

pub fn write_checkpoint<T: Real>(dir: &Path, params: &NetworkParams<T>, step: usize) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let manifest = CheckpointManifest {
        version: CHECKPOINT_VERSION,
        step,
        config: params.config.clone(),
        tensors: params
            .names
            .iter()
            .zip(&params.tensors)
            .map(|(n, t)| TensorEntry {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let mut bytes = Vec::with_capacity(4 * params.num_scalars());
    for t in &params.tensors {
        for x in t.data() {
            bytes.extend_from_slice(&(x.f64() as f32).to_le_bytes());
        }
    }
    // Write weights first so a manifest never points at a partial blob.
    std::fs::write(dir.join("weights.bin"), bytes)?;
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn read_checkpoint(dir: &Path) -> Result<(NetworkParams<f32>, usize)> {
    let mpath = dir.join("manifest.json");
    let label = mpath.display().to_string();
    let m: CheckpointManifest = serde_json::from_str(&std::fs::read_to_string(&mpath)?)?;
    if m.version != CHECKPOINT_VERSION {
        return Err(Error::format(label, format!("unsupported checkpoint version {}", m.version)));
    }
    let bytes = std::fs::read(dir.join("weights.bin"))?;
    let total: usize = m.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    if bytes.len() != 4 * total {
        return Err(Error::format(label, format!("weights.bin holds {} bytes, expected {}", bytes.len(), 4 * total)));
    }
    let mut floats = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    let mut tensors = Vec::new();
    for e in &m.tensors {
        let n = e.shape.iter().product();
        tensors.push(Tensor::from_vec(&e.shape, floats.by_ref().take(n).collect())?);
    }
    let params = NetworkParams {
        config: m.config,
        names: m.tensors.into_iter().map(|t| t.name).collect(),
        tensors,
    };
    params.validate().map_err(|e| Error::format(label, e.to_string()))?;
    Ok((params, m.step))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = NetworkParams::<f32>::init(&NetConfig::default(), 9).unwrap();
        write_checkpoint(dir.path(), &p, 12).unwrap();
        let (q, step) = read_checkpoint(dir.path()).unwrap();
        assert_eq!((q, step), (p, 12));
    }

    #[test]
    fn truncated_weights_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = NetworkParams::<f32>::init(&NetConfig::default(), 9).unwrap();
        write_checkpoint(dir.path(), &p, 0).unwrap();
        let w = dir.path().join("weights.bin");
        let bytes = std::fs::read(&w).unwrap();
        std::fs::write(&w, &bytes[..bytes.len() - 4]).unwrap();
        assert!(read_checkpoint(dir.path()).is_err());
    }
}
