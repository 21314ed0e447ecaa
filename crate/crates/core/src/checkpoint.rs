//! On-disk tensor bundles: `manifest.json` plus one contiguous `tensors.bin`.
//!
//! Tensor bytes are little-endian `f32`, row-major, packed back to back in
//! manifest order. The same layout carries network checkpoints
//! (`pleas-ckpt/1`) and activation dumps (`pleas-acts/1`).

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const CHECKPOINT_FORMAT: &str = "pleas-ckpt/1";
pub const ACTIVATIONS_FORMAT: &str = "pleas-acts/1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TENSORS_FILE: &str = "tensors.bin";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Linear,
    Relu,
    Batchnorm,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub name: String,
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub byte_offset: u64,
    pub byte_length: u64,
}

/// Field order here is the key order in the written JSON.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: String,
    pub layers: Vec<LayerEntry>,
    pub tensors: Vec<TensorEntry>,
}

/// A named tensor as stored: shape plus flat row-major values.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

impl Tensor {
    pub fn from_matrix(m: &Matrix) -> Self {
        Tensor {
            shape: vec![m.rows(), m.cols()],
            values: m.data().to_vec(),
        }
    }

    pub fn from_vector(v: &[f32]) -> Self {
        Tensor {
            shape: vec![v.len()],
            values: v.to_vec(),
        }
    }

    pub fn into_matrix(self, name: &str) -> Result<Matrix> {
        match self.shape.as_slice() {
            &[rows, cols] => Matrix::from_vec(rows, cols, self.values),
            other => Err(Error::shape(format!("tensor `{name}`"), "rank 2", format!("{other:?}"))),
        }
    }

    pub fn into_vector(self, name: &str) -> Result<Vec<f32>> {
        match self.shape.as_slice() {
            &[_] => Ok(self.values),
            other => Err(Error::shape(format!("tensor `{name}`"), "rank 1", format!("{other:?}"))),
        }
    }
}

/// A manifest together with its tensors, in manifest order.
#[derive(Clone, Debug, PartialEq)]
pub struct Bundle {
    pub format_version: String,
    pub layers: Vec<LayerEntry>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Bundle {
    pub fn new(format_version: &str, layers: Vec<LayerEntry>) -> Self {
        Bundle {
            format_version: format_version.to_string(),
            layers,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.push((name.into(), tensor));
    }

    /// Serialized manifest and tensor bytes.
    pub fn encode(&self) -> Result<(CheckpointManifest, Vec<u8>)> {
        let mut bytes = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            let expected: usize = t.shape.iter().product();
            if expected != t.values.len() {
                return Err(Error::shape(
                    format!("tensor `{name}`"),
                    format!("{expected} values for shape {:?}", t.shape),
                    t.values.len(),
                ));
            }
            if t.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(name.clone()));
            }
            let offset = bytes.len() as u64;
            for v in &t.values {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.shape.clone(),
                byte_offset: offset,
                byte_length: bytes.len() as u64 - offset,
            });
        }
        let manifest = CheckpointManifest {
            format_version: self.format_version.clone(),
            layers: self.layers.clone(),
            tensors: entries,
        };
        Ok((manifest, bytes))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let (manifest, bytes) = self.encode()?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = manifest_json(&manifest)?;
        let mpath = dir.join(MANIFEST_FILE);
        fs::write(&mpath, json).map_err(|e| Error::io(&mpath, e))?;
        let tpath = dir.join(TENSORS_FILE);
        fs::write(&tpath, bytes).map_err(|e| Error::io(&tpath, e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: CheckpointManifest =
            serde_json::from_str(&text).map_err(|e| Error::Manifest {
                path: mpath.clone(),
                message: e.to_string(),
            })?;
        let tpath = dir.join(TENSORS_FILE);
        let bytes = fs::read(&tpath).map_err(|e| Error::io(&tpath, e))?;
        Bundle::decode(manifest, &bytes, &mpath)
    }

    pub fn decode(manifest: CheckpointManifest, bytes: &[u8], origin: &Path) -> Result<Self> {
        let file_len = bytes.len() as u64;
        let mut ranges: Vec<(u64, u64, &str)> = Vec::new();
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for entry in &manifest.tensors {
            let count: usize = entry.shape.iter().product();
            if entry.byte_length != 4 * count as u64 {
                return Err(Error::Manifest {
                    path: origin.to_path_buf(),
                    message: format!(
                        "tensor `{}` has byte_length {} but shape {:?} needs {}",
                        entry.name,
                        entry.byte_length,
                        entry.shape,
                        4 * count
                    ),
                });
            }
            let end = entry
                .byte_offset
                .checked_add(entry.byte_length)
                .filter(|&e| e <= file_len)
                .ok_or_else(|| Error::OffsetOutOfRange {
                    tensor: entry.name.clone(),
                    offset: entry.byte_offset,
                    end: entry.byte_offset.saturating_add(entry.byte_length),
                    file_len,
                })?;
            ranges.push((entry.byte_offset, end, &entry.name));
            let raw = &bytes[entry.byte_offset as usize..end as usize];
            let values: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(entry.name.clone()));
            }
            tensors.push((
                entry.name.clone(),
                Tensor {
                    shape: entry.shape.clone(),
                    values,
                },
            ));
        }
        ranges.sort_unstable();
        for w in ranges.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(Error::Manifest {
                    path: origin.to_path_buf(),
                    message: format!("tensors `{}` and `{}` overlap", w[0].2, w[1].2),
                });
            }
        }
        let mut seen = std::collections::HashSet::new();
        if let Some((dup, _)) = tensors.iter().find(|(n, _)| !seen.insert(n.clone())) {
            return Err(Error::Manifest {
                path: origin.to_path_buf(),
                message: format!("duplicate tensor `{dup}`"),
            });
        }
        Ok(Bundle {
            format_version: manifest.format_version,
            layers: manifest.layers,
            tensors,
        })
    }

    pub fn into_map(self) -> HashMap<String, Tensor> {
        self.tensors.into_iter().collect()
    }
}

pub fn manifest_json(manifest: &CheckpointManifest) -> Result<String> {
    let mut s = serde_json::to_string_pretty(manifest).map_err(|e| Error::invalid(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// SHA-256 over the manifest JSON followed by the tensor bytes, hex encoded.
pub fn content_hash(bundle: &Bundle) -> Result<String> {
    let (manifest, bytes) = bundle.encode()?;
    let mut h = Sha256::new();
    h.update(manifest_json(&manifest)?.as_bytes());
    h.update(&bytes);
    Ok(hex::encode(h.finalize()))
}
