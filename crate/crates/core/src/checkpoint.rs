//! Named-array bundles with metadata, used by every trainable module.
//!
//! Layout: `AVCKPT01`, a little-endian `u64` metadata length, the metadata as
//! JSON, a `u32` array count, then per array its name, rank, dims and `f64`
//! values; a SHA-256 of all preceding bytes closes the file.

use std::collections::BTreeMap;
use std::path::Path;

use avatarkit_tensor::{Array, ParamStore, Scalar};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_err, CheckpointError, Error, Result};

const MAGIC: &[u8; 8] = b"AVCKPT01";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub module: String,
    pub step: u64,
    pub config_hash: String,
    /// Interface widths other modules must agree with.
    pub dims: BTreeMap<String, usize>,
    /// Echo of the module configuration.
    pub config: serde_json::Value,
    /// Free-form training summary (final losses, accuracies).
    #[serde(default)]
    pub summary: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub arrays: Vec<(String, Array<f64>)>,
}

/// SHA-256 of the canonical JSON form of a serialisable config.
pub fn config_hash<C: Serialize>(config: &C) -> String {
    let json = serde_json::to_vec(config).expect("config serialises");
    hex::encode(Sha256::digest(&json))
}

impl Checkpoint {
    pub fn new<C: Serialize, T: Scalar>(module: &str, step: u64, config: &C, dims: &[(&str, usize)], store: &ParamStore<T>) -> Self {
        Self {
            meta: CheckpointMeta {
                module: module.to_string(),
                step,
                config_hash: config_hash(config),
                dims: dims.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
                config: serde_json::to_value(config).expect("config serialises"),
                summary: serde_json::Value::Null,
            },
            arrays: store.iter().map(|(n, a)| (n.to_string(), a.cast())).collect(),
        }
    }

    pub fn with_summary(mut self, summary: serde_json::Value) -> Self {
        self.meta.summary = summary;
        self
    }

    pub fn expect_module(&self, module: &str) -> Result<()> {
        if self.meta.module != module {
            return Err(CheckpointError::ModuleMismatch { expected: module.into(), found: self.meta.module.clone() }.into());
        }
        Ok(())
    }

    pub fn dim(&self, name: &str) -> Result<usize> {
        self.meta.dims.get(name).copied().ok_or_else(|| {
            CheckpointError::FieldMismatch { field: name.into(), expected: "present".into(), found: "absent".into() }.into()
        })
    }

    /// Module configuration echoed at save time.
    pub fn config<C: for<'de> Deserialize<'de>>(&self) -> Result<C> {
        serde_json::from_value(self.meta.config.clone())
            .map_err(|e| CheckpointError::Corrupt(format!("config echo of `{}` does not parse: {e}", self.meta.module)).into())
    }

    pub fn array(&self, name: &str) -> Option<&Array<f64>> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, a)| a)
    }

    /// Overwrites every parameter of `store` from the same-named array.
    pub fn load_into<T: Scalar>(&self, store: &mut ParamStore<T>) -> Result<()> {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = store.name(id).to_string();
            let a = self.array(&name).ok_or_else(|| CheckpointError::MissingArray { name: name.clone() })?;
            if a.shape() != store.get(id).shape() {
                return Err(CheckpointError::ShapeMismatch {
                    name,
                    expected: store.get(id).shape().to_vec(),
                    found: a.shape().to_vec(),
                }
                .into());
            }
            *store.get_mut(id) = a.cast();
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.meta).expect("metadata serialises");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, a) in &self.arrays {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(a.ndim() as u32).to_le_bytes());
            for &d in a.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in a.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::from(CheckpointError::Corrupt(m.to_string()));
        if bytes.len() < MAGIC.len() + 32 || &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic or file too short"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch (truncated or modified file)"));
        }
        let mut r = Reader { buf: body, pos: 8 };
        let meta_len = r.u64()? as usize;
        let meta: CheckpointMeta =
            serde_json::from_slice(r.take(meta_len)?).map_err(|e| corrupt(&format!("metadata: {e}")))?;
        let count = r.u32()? as usize;
        let mut arrays = Vec::with_capacity(count);
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| corrupt("array name is not UTF-8"))?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let raw = r.take(len.checked_mul(8).ok_or_else(|| corrupt("array too large"))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            arrays.push((name, Array::new(&shape, data)));
        }
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes after arrays"));
        }
        Ok(Self { meta, arrays })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::from(CheckpointError::Corrupt("unexpected end of data".into())))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
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

    fn sample() -> Checkpoint {
        let mut store = ParamStore::<f32>::new();
        store.add("a.w", Array::from_f64(&[2, 2], &[0.1, -2.5, 3.0, 1e-7]));
        store.add("b", Array::from_f64(&[3], &[f64::MIN_POSITIVE, 0.0, -0.0]));
        Checkpoint::new("recognizer", 12, &serde_json::json!({"x": 1}), &[("bottleneck", 32)], &store)
    }

    #[test]
    fn bytes_round_trip_bit_exact() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back.meta, c.meta);
        for ((n1, a1), (n2, a2)) in c.arrays.iter().zip(&back.arrays) {
            assert_eq!(n1, n2);
            let bits1: Vec<u64> = a1.data().iter().map(|v| v.to_bits()).collect();
            let bits2: Vec<u64> = a2.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits1, bits2);
        }
    }

    #[test]
    fn truncation_and_tampering_are_corruption() {
        let bytes = sample().to_bytes();
        for cut in [0, 5, 20, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Checkpoint(CheckpointError::Corrupt(_)))));
        }
        let mut bad = bytes.clone();
        bad[30] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Checkpoint(CheckpointError::Corrupt(_)))));
    }

    #[test]
    fn module_and_shape_checks() {
        let c = sample();
        assert!(matches!(c.expect_module("dubbing"), Err(Error::Checkpoint(CheckpointError::ModuleMismatch { .. }))));
        let mut store = ParamStore::<f64>::new();
        store.add("a.w", Array::zeros(&[2, 3]));
        assert!(matches!(c.load_into(&mut store), Err(Error::Checkpoint(CheckpointError::ShapeMismatch { .. }))));
        let mut store = ParamStore::<f64>::new();
        store.add("zzz", Array::zeros(&[1]));
        assert!(matches!(c.load_into(&mut store), Err(Error::Checkpoint(CheckpointError::MissingArray { .. }))));
    }
}
