//! Binary checkpoint: `CARC`, u32 version, u32 header length, a JSON header
//! with the tensor manifest, then little-endian `f64` tensor data.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::params::{EncoderParams, ModelConfig};
use super::vocab::Vocabulary;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CARC";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: [usize; 2],
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Vocabulary,
    tensors: Vec<ManifestEntry>,
    #[serde(default)]
    extra: serde_json::Value,
}

/// Named tensors plus the model configuration and vocabulary. `extra`
/// carries anything else a caller wants persisted (training state).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub tensors: Vec<(String, Array2<f64>)>,
    pub extra: serde_json::Value,
}

impl Checkpoint {
    pub fn from_params(config: &ModelConfig, vocab: &Vocabulary, params: &EncoderParams) -> Self {
        let mut ck = Self {
            config: config.clone(),
            vocab: vocab.clone(),
            tensors: Vec::new(),
            extra: serde_json::Value::Null,
        };
        ck.push_params("", params);
        ck
    }

    /// Appends every tensor of `params` under `prefix`.
    pub fn push_params(&mut self, prefix: &str, params: &EncoderParams) {
        for (name, t) in params.tensors() {
            self.tensors.push((format!("{prefix}{name}"), t.clone()));
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&Array2<f64>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Rebuilds the parameter set stored under `prefix`.
    pub fn params(&self, prefix: &str) -> Result<EncoderParams> {
        EncoderParams::from_named(&self.config, |name| self.tensor(&format!("{prefix}{name}")).cloned())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0;
        let tensors = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let e = ManifestEntry {
                    name: name.clone(),
                    shape: [t.nrows(), t.ncols()],
                    offset,
                };
                offset += t.len() * 8;
                e
            })
            .collect();
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            tensors,
            extra: self.extra.clone(),
        })?;
        let mut out = Vec::with_capacity(12 + header.len() + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in &self.tensors {
            for v in t.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Version {
                found: version,
                expected: VERSION,
            });
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let data_start = 12usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("header runs past end of file".into()))?;
        let header: Header = serde_json::from_slice(&bytes[12..data_start]).map_err(|e| bad(format!("manifest: {e}")))?;
        let data = &bytes[data_start..];
        let mut expected_offset = 0;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let len = e.shape[0].checked_mul(e.shape[1]).ok_or_else(|| bad(format!("tensor {}: shape overflow", e.name)))?;
            if e.offset != expected_offset {
                return Err(bad(format!("tensor {}: offset {} but expected {}", e.name, e.offset, expected_offset)));
            }
            let end = e.offset + len * 8;
            if end > data.len() {
                return Err(bad(format!("tensor {}: data truncated", e.name)));
            }
            let vals = data[e.offset..end].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            let t = Array2::from_shape_vec((e.shape[0], e.shape[1]), vals).expect("length checked");
            tensors.push((e.name, t));
            expected_offset = end;
        }
        if expected_offset != data.len() {
            return Err(bad(format!("{} trailing bytes after tensor data", data.len() - expected_offset)));
        }
        Ok(Self {
            config: header.config,
            vocab: header.vocab,
            tensors,
            extra: header.extra,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
