//! Checkpoint layout: `model.json` (manifest of names, shapes, mask, adapter)
//! next to `model.bin` (all tensor values, little-endian `f64`, manifest order).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LoraSpec, ModelConfig, ModelState, Param};
use crate::autograd::Tensor;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "model.json";
pub const WEIGHTS_FILE: &str = "model.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    /// Offset into `model.bin`, in `f64` elements.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub config: ModelConfig,
    pub lora: Option<LoraSpec>,
    pub tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(state: &ModelState, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut offset = 0;
    let mut tensors = Vec::with_capacity(state.params.len());
    let mut bytes = Vec::with_capacity(state.param_count() * 8);
    for p in &state.params {
        tensors.push(TensorEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            trainable: p.trainable,
            offset,
        });
        offset += p.value.len();
        for v in p.value.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        config: state.config.clone(),
        lora: state.lora.clone(),
        tensors,
    };
    let mpath = dir.join(MANIFEST_FILE);
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    fs::write(&mpath, json).map_err(|e| Error::io(&mpath, e))?;
    let wpath = dir.join(WEIGHTS_FILE);
    fs::write(&wpath, bytes).map_err(|e| Error::io(&wpath, e))?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<ModelState> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    let wpath = dir.join(WEIGHTS_FILE);
    let bytes = fs::read(&wpath).map_err(|e| Error::io(&wpath, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Invalid(format!(
            "{} is not a whole number of f64 values",
            wpath.display()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let mut params = Vec::with_capacity(manifest.tensors.len());
    for entry in manifest.tensors {
        let len: usize = entry.shape.iter().product();
        let end = entry.offset + len;
        if end > values.len() {
            return Err(Error::Invalid(format!(
                "tensor {} runs past end of weights",
                entry.name
            )));
        }
        params.push(Param {
            name: entry.name,
            value: Tensor::new(entry.shape, values[entry.offset..end].to_vec())?,
            trainable: entry.trainable,
        });
    }
    ModelState::from_parts(manifest.config, params, manifest.lora)
}

#[cfg(test)]
mod tests {
    use super::super::tests::small_config;
    use super::super::LoraTarget;
    use super::*;

    #[test]
    fn round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let mut state = ModelState::init(small_config()).unwrap();
        state
            .attach_lora(2, 4.0, &[LoraTarget::Q, LoraTarget::FfIn], 3)
            .unwrap();
        save_checkpoint(&state, dir.path()).unwrap();
        let back = load_checkpoint(dir.path()).unwrap();
        assert_eq!(state, back);
    }

    #[test]
    fn missing_checkpoint_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_checkpoint(&dir.path().join("nope")),
            Err(Error::Io { .. })
        ));
    }
}
