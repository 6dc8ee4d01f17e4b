//! Single-file model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     magic  b"TNCKPT\0\0"
//! 8       4     u32    format version (currently 1)
//! 12      8     u64    header length H in bytes
//! 20      H     UTF-8 JSON header
//! 20+H    4·N   f32 tensor data, concatenated in header order
//! ```
//!
//! The header holds the [`ModelConfig`], run metadata and a tensor index
//! `{name, shape, offset}` with offsets counted in elements. Readers reject
//! unknown versions, truncated bodies and tensors that do not match the
//! parameter layout implied by the config. Writes go through a temporary
//! file and a rename, so a crash never leaves a half-written checkpoint.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::seqfile::atomic_write;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TaylorNet};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::train::TrainConfig;

pub const MAGIC: &[u8; 8] = b"TNCKPT\0\0";
pub const VERSION: u32 = 1;
const PREFIX: usize = 8 + 4 + 8;

/// Where a checkpoint came from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    /// Optimizer steps taken when the checkpoint was written.
    pub step: usize,
    pub epoch: usize,
    /// Ablation variant name, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    /// Training configuration that produced the weights.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
    elements: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub meta: CheckpointMeta,
    pub params: ParamStore<f32>,
}

impl Checkpoint {
    /// Bundle parameters with their config; the parameter layout is checked.
    pub fn new(model: ModelConfig, meta: CheckpointMeta, params: ParamStore<f32>) -> Result<Self> {
        TaylorNet::new(model.clone())?.check_params(&params)?;
        Ok(Self { model, meta, params })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::with_capacity(self.params.len());
        let mut offset = 0;
        for (name, t) in self.params.iter() {
            tensors.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            });
            offset += t.len();
        }
        let header = Header {
            model: self.model.clone(),
            meta: self.meta.clone(),
            tensors,
            elements: offset,
        };
        let json = serde_json::to_vec(&header)
            .map_err(|e| Error::format("checkpoint header", e.to_string()))?;
        let mut out = Vec::with_capacity(PREFIX + json.len() + 4 * offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in self.params.iter() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |d: String| Error::format("checkpoint", d);
        if bytes.len() < PREFIX || &bytes[..8] != MAGIC {
            return Err(bad("missing TNCKPT magic".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(format!("unsupported version {} (expected {})", version, VERSION)));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body_start = PREFIX
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad(format!("header length {} exceeds file size {}", hlen, bytes.len())))?;
        let header: Header = serde_json::from_slice(&bytes[PREFIX..body_start])
            .map_err(|e| bad(format!("header: {}", e)))?;
        let body = &bytes[body_start..];
        if body.len() != 4 * header.elements {
            return Err(bad(format!(
                "body holds {} bytes, header declares {} f32 values",
                body.len(),
                header.elements
            )));
        }
        let mut params = ParamStore::new();
        for e in &header.tensors {
            let n: usize = e.shape.iter().product();
            let end = e.offset.checked_add(n).filter(|&end| end <= header.elements);
            let Some(end) = end else {
                return Err(bad(format!("tensor `{}` runs past the body", e.name)));
            };
            let data = body[4 * e.offset..4 * end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            if params.contains(&e.name) {
                return Err(bad(format!("tensor `{}` listed twice", e.name)));
            }
            params.insert(e.name.clone(), Tensor::new(e.shape.clone(), data)?);
        }
        if !params.all_finite() {
            return Err(Error::NonFinite("checkpoint parameters".into()));
        }
        Self::new(header.model, header.meta, params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Short content hash identifying these exact weights and config.
    pub fn id(&self) -> Result<String> {
        Ok(short_hash(&self.to_bytes()?))
    }
}

/// First 16 hex digits of the SHA-256 of `bytes`.
pub fn short_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest[..8].iter().map(|b| format!("{:02x}", b)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> ModelConfig {
        ModelConfig {
            hidden_channels: 2,
            latent_channels: 2,
            lstm_layers: 1,
            ..ModelConfig::tiny()
        }
    }

    fn sample() -> Checkpoint {
        let net = TaylorNet::new(small()).unwrap();
        let params = net.init(&mut ChaCha8Rng::seed_from_u64(4));
        let meta = CheckpointMeta {
            step: 12,
            epoch: 3,
            variant: Some("no_mcu".into()),
            train: None,
        };
        Checkpoint::new(small(), meta, params).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.id().unwrap(), ck.id().unwrap());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.tnck");
        let ck = sample();
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 4]).is_err());
        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        assert!(Checkpoint::from_bytes(&wrong_magic).is_err());
        let mut wrong_version = bytes.clone();
        wrong_version[8] = 9;
        assert!(Checkpoint::from_bytes(&wrong_version).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..10]).is_err());
    }

    #[test]
    fn mismatched_layout_is_rejected() {
        let ck = sample();
        let mut params = ck.params.clone();
        params.insert("extra.weight", Tensor::zeros([1]));
        assert!(Checkpoint::new(ck.model.clone(), ck.meta.clone(), params).is_err());
        let other = ModelConfig {
            latent_channels: 4,
            ..small()
        };
        assert!(Checkpoint::new(other, ck.meta.clone(), ck.params.clone()).is_err());
    }

    #[test]
    fn changing_a_weight_changes_the_id() {
        let ck = sample();
        let mut other = ck.clone();
        let name = other.params.names().next().unwrap().clone();
        other.params.get_mut(&name).unwrap().data_mut()[0] += 1.0;
        assert_ne!(ck.id().unwrap(), other.id().unwrap());
    }
}
