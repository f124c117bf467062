//! Directory checkpoints: `manifest.json` plus one little-endian f32 blob per tensor.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
    pub crc32: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub architecture: Vec<usize>,
    pub weight_bits: u8,
    pub seed: u64,
    /// Free-form training settings, kept for provenance.
    pub hyperparameters: BTreeMap<String, serde_json::Value>,
    #[serde(default)]
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub tensors: BTreeMap<String, NamedTensor>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Result<&NamedTensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::format("checkpoint", format!("missing tensor {name}")))
    }
}

fn encode(data: &[f32]) -> Vec<u8> {
    data.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn save_checkpoint(ckpt: &Checkpoint, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = ckpt.manifest.clone();
    manifest.version = CHECKPOINT_VERSION;
    manifest.tensors.clear();
    for (name, t) in &ckpt.tensors {
        let expected: usize = t.shape.iter().product();
        if expected != t.data.len() {
            return Err(Error::Shape(format!(
                "tensor {name}: shape {:?} needs {expected} values, has {}",
                t.shape,
                t.data.len()
            )));
        }
        let bytes = encode(&t.data);
        let file = format!("{name}.f32le");
        let path = dir.join(&file);
        std::fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        manifest.tensors.push(TensorEntry {
            name: name.clone(),
            shape: t.shape.clone(),
            file,
            crc32: crc32fast::hash(&bytes),
        });
    }
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let raw: serde_json::Value = serde_json::from_str(&text)?;
    // Check the version before the full schema so old or future layouts fail clearly.
    let version = raw
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::format("checkpoint manifest", "missing integer `version`"))?;
    if version != CHECKPOINT_VERSION as u64 {
        return Err(Error::Version {
            found: version as u32,
            supported: CHECKPOINT_VERSION,
        });
    }
    let manifest: CheckpointManifest = serde_json::from_value(raw)?;
    let mut tensors = BTreeMap::new();
    for entry in &manifest.tensors {
        let path = dir.join(&entry.file);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let actual = crc32fast::hash(&bytes);
        if actual != entry.crc32 {
            return Err(Error::Checksum {
                file: entry.file.clone(),
                expected: entry.crc32,
                actual,
            });
        }
        let n: usize = entry.shape.iter().product();
        if bytes.len() != 4 * n {
            return Err(Error::Length {
                context: entry.file.clone(),
                expected: 4 * n as u64,
                found: bytes.len() as u64,
            });
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.insert(
            entry.name.clone(),
            NamedTensor {
                shape: entry.shape.clone(),
                data,
            },
        );
    }
    Ok(Checkpoint { manifest, tensors })
}
