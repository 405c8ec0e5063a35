//! Named-tensor checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "PASCKPT\x01"
//! meta_len   u32      length of the UTF-8 JSON metadata block
//! meta       bytes
//! count      u32      number of tensors
//! per tensor:
//!   name_len u32, name bytes
//!   precision u8      4 = f32, 8 = f64
//!   rank      u32, then rank x u64 dimensions
//!   values    product(dims) x precision bytes
//! ```
//!
//! A parameter store is saved as `<section>/param/<name>` tensors plus
//! `<section>/adam.m/<name>`, `<section>/adam.v/<name>` and
//! `<section>/adagrad/<name>` optimizer tensors; step counts and frozen
//! groups go into the metadata under the section key.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::store::{AdamState, ParameterStore};
use super::tensor::Tensor;
use crate::scalar::{Precision, Scalar};

const MAGIC: &[u8; 8] = b"PASCKPT\x01";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("truncated checkpoint at byte {0}")]
    Truncated(usize),
    #[error("tensor `{name}` stored as {found} but reader expects {expected}")]
    Precision {
        name: String,
        found: Precision,
        expected: Precision,
    },
    #[error("unknown precision tag {0}")]
    BadPrecisionTag(u8),
    #[error("metadata: {0}")]
    Meta(#[from] serde_json::Error),
    #[error("invalid utf-8 in tensor name")]
    Utf8,
    #[error("missing store section `{0}`")]
    MissingSection(String),
}

#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub meta: serde_json::Map<String, serde_json::Value>,
    pub tensors: BTreeMap<String, Tensor<T>>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
struct StoreMeta {
    order: Vec<String>,
    adam_steps: BTreeMap<String, u64>,
    frozen: Vec<String>,
}

impl<T: Scalar> Default for Checkpoint<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new() -> Self {
        Checkpoint {
            meta: serde_json::Map::new(),
            tensors: BTreeMap::new(),
        }
    }

    pub fn set_meta<V: Serialize>(&mut self, key: &str, value: &V) -> Result<(), CheckpointError> {
        self.meta.insert(key.to_string(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn get_meta<V: for<'de> Deserialize<'de>>(&self, key: &str) -> Result<Option<V>, CheckpointError> {
        match self.meta.get(key) {
            Some(v) => Ok(Some(serde_json::from_value(v.clone())?)),
            None => Ok(None),
        }
    }

    /// Writes every parameter and its optimizer state under `section`.
    pub fn put_store(&mut self, section: &str, store: &ParameterStore<T>) -> Result<(), CheckpointError> {
        let mut meta = StoreMeta {
            frozen: store.frozen_groups().map(String::from).collect(),
            ..Default::default()
        };
        for p in store.iter() {
            meta.order.push(p.name.clone());
            self.tensors.insert(format!("{section}/param/{}", p.name), p.value.clone());
            if let Some(a) = &p.adam {
                self.tensors.insert(format!("{section}/adam.m/{}", p.name), a.m.clone());
                self.tensors.insert(format!("{section}/adam.v/{}", p.name), a.v.clone());
                meta.adam_steps.insert(p.name.clone(), a.step);
            }
            if let Some(acc) = &p.adagrad {
                self.tensors.insert(format!("{section}/adagrad/{}", p.name), acc.clone());
            }
        }
        self.set_meta(&format!("store:{section}"), &meta)
    }

    pub fn take_store(&self, section: &str) -> Result<ParameterStore<T>, CheckpointError> {
        let meta: StoreMeta = self
            .get_meta(&format!("store:{section}"))?
            .ok_or_else(|| CheckpointError::MissingSection(section.to_string()))?;
        let mut store = ParameterStore::new();
        for name in &meta.order {
            let value = self
                .tensors
                .get(&format!("{section}/param/{name}"))
                .cloned()
                .ok_or_else(|| CheckpointError::MissingSection(format!("{section}/param/{name}")))?;
            let id = store.insert(name.clone(), value);
            let p = store.param_mut(id);
            if let Some(&step) = meta.adam_steps.get(name) {
                let m = self.tensors.get(&format!("{section}/adam.m/{name}")).cloned();
                let v = self.tensors.get(&format!("{section}/adam.v/{name}")).cloned();
                if let (Some(m), Some(v)) = (m, v) {
                    p.adam = Some(AdamState { m, v, step });
                }
            }
            p.adagrad = self.tensors.get(&format!("{section}/adagrad/{name}")).cloned();
        }
        store.set_frozen_groups(meta.frozen);
        Ok(store)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CheckpointError> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        let meta = serde_json::to_vec(&self.meta)?;
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(T::PRECISION.tag());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let meta_len = r.u32()? as usize;
        let meta = serde_json::from_slice(r.take(meta_len)?)?;
        let count = r.u32()? as usize;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| CheckpointError::Utf8)?
                .to_string();
            let tag = r.take(1)?[0];
            let found = Precision::from_tag(tag).ok_or(CheckpointError::BadPrecisionTag(tag))?;
            if found != T::PRECISION {
                return Err(CheckpointError::Precision {
                    name,
                    found,
                    expected: T::PRECISION,
                });
            }
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let w = found.byte_width();
            let raw = r.take(n * w)?;
            let data = raw.chunks_exact(w).map(T::read_le).collect();
            tensors.insert(name, Tensor::new(shape, data));
        }
        Ok(Checkpoint { meta, tensors })
    }

    pub fn write(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Precision recorded in a checkpoint file, read without decoding tensors.
pub fn peek_precision(bytes: &[u8]) -> Result<Option<Precision>, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let meta_len = r.u32()? as usize;
    r.take(meta_len)?;
    if r.u32()? == 0 {
        return Ok(None);
    }
    let name_len = r.u32()? as usize;
    r.take(name_len)?;
    let tag = r.take(1)?[0];
    Precision::from_tag(tag)
        .map(Some)
        .ok_or(CheckpointError::BadPrecisionTag(tag))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated(self.pos))?;
        if end > self.bytes.len() {
            return Err(CheckpointError::Truncated(self.pos));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
