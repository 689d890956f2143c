//! Binary checkpoint container.
//!
//! All integers little-endian:
//!
//! ```text
//! magic      8 bytes  "ATYVCKPT"
//! version    u32      1
//! rng_seed   u64
//! meta_len   u32      followed by meta_len bytes of UTF-8 JSON
//! count      u32      number of tensors
//! count × {
//!     name_len u32, name (UTF-8)
//!     flags    u8     bit 0 = trainable
//!     rows     u32
//!     cols     u32
//!     values   rows·cols × f64 (IEEE-754 bits, row-major)
//! }
//! ```
//!
//! Tensors are written in lexicographic name order, so equal stores produce
//! byte-identical files.

use std::path::Path;

use super::params::{Param, ParamStore};
use super::tensor::Tensor2D;
use crate::error::{Error, Result};
use crate::util::atomic_write;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ATYVCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value, params: ParamStore) -> Self {
        Self { meta, params }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.meta).expect("json value serializes");
        let mut out = Vec::with_capacity(32 + meta.len() + self.params.num_values() * 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.params.rng_seed().to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, p) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(u8::from(p.trainable));
            out.extend_from_slice(&(p.value.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(p.value.cols() as u32).to_le_bytes());
            for v in p.value.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, origin };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::format(origin, "not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(origin, format!("unsupported checkpoint version {version}")));
        }
        let seed = r.u64()?;
        let meta_len = r.u32()? as usize;
        let meta: serde_json::Value = serde_json::from_slice(r.take(meta_len)?)
            .map_err(|e| Error::format(origin, format!("checkpoint metadata: {e}")))?;
        let count = r.u32()? as usize;
        let mut params = ParamStore::new(seed);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::format(origin, "tensor name is not UTF-8"))?
                .to_string();
            let flags = r.take(1)?[0];
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let raw = r.take(rows * cols * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let mut p = Param::new(Tensor2D::from_vec(rows, cols, data)?);
            p.trainable = flags & 1 == 1;
            params.insert_param(&name, p);
        }
        if r.pos != bytes.len() {
            return Err(Error::format(origin, "trailing bytes after last tensor"));
        }
        Ok(Self { meta, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingArtifact(format!("checkpoint {}", path.display()))
            } else {
                Error::io(path, e)
            }
        })?;
        Self::from_bytes(&bytes, path)
    }
}

/// Writes a model checkpoint whose metadata is `{"kind": kind, "model": meta}`.
pub fn save_model<M: serde::Serialize>(path: &Path, kind: &str, meta: &M, params: &ParamStore) -> Result<()> {
    let meta = serde_json::json!({
        "kind": kind,
        "model": serde_json::to_value(meta).expect("model metadata serializes"),
    });
    Checkpoint::new(meta, params.clone()).save(path)
}

/// Loads a checkpoint written by [`save_model`], checking its kind.
pub fn load_model<M: serde::de::DeserializeOwned>(path: &Path, kind: &str) -> Result<(M, ParamStore)> {
    let ck = Checkpoint::load(path)?;
    let found = ck.meta.get("kind").and_then(|k| k.as_str()).unwrap_or("");
    if found != kind {
        return Err(Error::format(path, format!("expected a {kind} checkpoint, found {found:?}")));
    }
    let model = ck.meta.get("model").cloned().unwrap_or_default();
    let meta = serde_json::from_value(model).map_err(|e| Error::format(path, e.to_string()))?;
    Ok((meta, ck.params))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(
                self.origin,
                format!("truncated checkpoint at byte {}", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_roundtrip_is_exact() {
        let mut s = ParamStore::new(99);
        s.init_uniform("b/x", 3, 2, 2);
        s.insert("a/y", Tensor2D::from_vec(1, 2, vec![f64::MIN_POSITIVE, -0.0]).unwrap());
        s.set_trainable("a/y", false).unwrap();
        let ck = Checkpoint::new(serde_json::json!({"kind": "test", "n": 3}), s);
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        assert!(!back.params.get("a/y").unwrap().trainable);
    }

    #[test]
    fn truncation_is_detected() {
        let ck = Checkpoint::new(serde_json::json!({}), {
            let mut s = ParamStore::new(1);
            s.init_uniform("w", 2, 2, 2);
            s
        });
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3], Path::new("mem")).is_err());
        assert!(Checkpoint::from_bytes(b"NOTACKPTxxxx", Path::new("mem")).is_err());
    }
}
