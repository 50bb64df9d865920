//! Single-file weight container: an 8-byte magic, a little-endian `u64`
//! header length, a JSON header, then raw little-endian `f32` data.
//!
//! The header carries the model kind, its config, free-form metadata, the
//! tensor directory, and a SHA-256 hash of the model parameters (names,
//! shapes and values in store order). Auxiliary tensors such as optimizer
//! moments are stored after the parameters and are not part of the hash.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"DDCKPT01";

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    kind: String,
    config: serde_json::Value,
    meta: serde_json::Value,
    weight_hash: String,
    params: Vec<TensorEntry>,
    extra: Vec<TensorEntry>,
}

/// In-memory checkpoint.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub kind: String,
    pub config: serde_json::Value,
    pub meta: serde_json::Value,
    pub params: Vec<(String, Tensor)>,
    pub extra: Vec<(String, Tensor)>,
}

/// SHA-256 over parameter names, shapes and values, hex encoded.
pub fn weight_hash<'a>(params: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> String {
    let mut h = Sha256::new();
    for (name, t) in params {
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.update((t.shape().len() as u64).to_le_bytes());
        for &d in t.shape() {
            h.update((d as u64).to_le_bytes());
        }
        for v in t.data() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

pub fn store_hash(store: &ParamStore) -> String {
    weight_hash(store.iter())
}

impl Checkpoint {
    pub fn from_store(kind: &str, config: serde_json::Value, store: &ParamStore) -> Self {
        Self {
            kind: kind.to_string(),
            config,
            meta: serde_json::Value::Object(Default::default()),
            params: store.iter().map(|(n, t)| (n.to_string(), t.clone())).collect(),
            extra: Vec::new(),
        }
    }

    pub fn weight_hash(&self) -> String {
        weight_hash(self.params.iter().map(|(n, t)| (n.as_str(), t)))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut offset = 0;
        let mut dir = |list: &[(String, Tensor)]| -> Vec<TensorEntry> {
            list.iter()
                .map(|(name, t)| {
                    let e = TensorEntry { name: name.clone(), shape: t.shape().to_vec(), offset };
                    offset += t.len();
                    e
                })
                .collect()
        };
        let header = Header {
            kind: self.kind.clone(),
            config: self.config.clone(),
            meta: self.meta.clone(),
            weight_hash: self.weight_hash(),
            params: dir(&self.params),
            extra: dir(&self.extra),
        };
        let json = serde_json::to_vec(&header)?;
        let mut bytes = Vec::with_capacity(16 + json.len() + offset * 4);
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&json);
        for (_, t) in self.params.iter().chain(&self.extra) {
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Reads a checkpoint and verifies the embedded parameter hash.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Format(format!("{} is not a checkpoint", path.display())));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes
            .get(16..16 + hlen)
            .ok_or_else(|| Error::Format("truncated checkpoint header".into()))?;
        let header: Header = serde_json::from_slice(body)?;
        let data = &bytes[16 + hlen..];
        let read = |entries: &[TensorEntry]| -> Result<Vec<(String, Tensor)>> {
            entries
                .iter()
                .map(|e| {
                    let len: usize = e.shape.iter().product();
                    let raw = data
                        .get(e.offset * 4..(e.offset + len) * 4)
                        .ok_or_else(|| Error::Format(format!("tensor {} out of bounds", e.name)))?;
                    let vals = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
                    Ok((e.name.clone(), Tensor::from_vec(&e.shape, vals)?))
                })
                .collect()
        };
        let ckpt = Checkpoint {
            kind: header.kind,
            config: header.config,
            meta: header.meta,
            params: read(&header.params)?,
            extra: read(&header.extra)?,
        };
        let actual = ckpt.weight_hash();
        if actual != header.weight_hash {
            return Err(Error::Integrity(format!(
                "{}: stored weight hash {} does not match contents {}",
                path.display(),
                header.weight_hash,
                actual
            )));
        }
        Ok(ckpt)
    }

    /// Reads only the stored hash, without verifying it.
    pub fn stored_hash(path: &Path) -> Result<String> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Format(format!("{} is not a checkpoint", path.display())));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header: Header = serde_json::from_slice(&bytes[16..16 + hlen])?;
        Ok(header.weight_hash)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Config(format!("expected a {kind} checkpoint, found {}", self.kind)));
        }
        Ok(())
    }

    pub fn load_into(&self, store: &mut ParamStore) -> Result<()> {
        store.load_from(self.params.iter().map(|(n, t)| (n.as_str(), t.clone())))
    }
}
