//! Versioned binary container for named tensors plus a JSON manifest.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "BEHAVECK"
//! version    u32
//! manifest   u64 length + UTF-8 JSON
//! count      u64
//! per tensor:
//!   name     u32 length + UTF-8
//!   ndim     u32, then ndim × u64 extents
//!   payload  product(extents) × f64 (LE bit patterns)
//!   checksum 32 bytes SHA-256 over name bytes and payload bytes
//! ```
//!
//! Values are stored as raw bit patterns, so reloading is bit-exact.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::optim::AdamState;
use crate::params::{ParamSet, Role};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"BEHAVECK";
pub const FORMAT_VERSION: u32 = 1;

/// Named tensors plus free-form JSON metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub manifest: serde_json::Value,
    tensors: BTreeMap<String, Tensor>,
}

fn header_err(message: impl Into<String>) -> Error {
    Error::Checkpoint {
        param: "<header>".into(),
        message: message.into(),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let out = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(out)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

fn checksum(name: &str, payload: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(name.as_bytes());
    h.update(payload);
    h.finalize().into()
}

impl Checkpoint {
    pub fn new(manifest: serde_json::Value) -> Self {
        Self {
            manifest,
            tensors: BTreeMap::new(),
        }
    }

    pub fn put(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors.get(name).ok_or_else(|| Error::Checkpoint {
            param: name.into(),
            message: "missing from checkpoint".into(),
        })
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Stores every tensor of `params` under `group/name`.
    pub fn put_params(&mut self, group: &str, params: &ParamSet) {
        for (k, t) in params.iter() {
            self.put(format!("{group}/{k}"), t.clone());
        }
    }

    pub fn has_group(&self, group: &str) -> bool {
        let prefix = format!("{group}/");
        self.tensors.keys().any(|k| k.starts_with(&prefix))
    }

    /// Rebuilds the parameter collection stored under `group`.
    pub fn params(&self, group: &str, role: Role) -> Result<ParamSet> {
        let prefix = format!("{group}/");
        let mut p = ParamSet::new(role);
        for (k, t) in &self.tensors {
            if let Some(rest) = k.strip_prefix(&prefix) {
                p.insert(rest, t.clone())?;
            }
        }
        if p.is_empty() {
            return Err(Error::Checkpoint {
                param: group.into(),
                message: "no parameters stored for this group".into(),
            });
        }
        Ok(p)
    }

    /// Loads the group's values into an existing collection, checking that
    /// names and shapes agree exactly.
    pub fn restore_into(&self, group: &str, params: &mut ParamSet) -> Result<()> {
        let stored = self.params(group, params.role())?;
        if stored.len() != params.len() {
            return Err(Error::contract(format!(
                "checkpoint group `{group}` has {} tensors, model expects {}",
                stored.len(),
                params.len()
            )));
        }
        for (k, t) in stored.iter() {
            let slot = params
                .get(k)
                .map_err(|_| Error::contract(format!("checkpoint tensor `{group}/{k}` unknown to the model")))?;
            if slot.shape() != t.shape() {
                return Err(Error::contract(format!(
                    "checkpoint tensor `{group}/{k}` has shape {:?}, model expects {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
        }
        for (k, t) in stored.iter() {
            params.set(k, t.clone())?;
        }
        Ok(())
    }

    pub fn put_adam(&mut self, group: &str, state: &AdamState) {
        for (k, t) in &state.m {
            self.put(format!("{group}.adam_m/{k}"), t.clone());
        }
        for (k, t) in &state.v {
            self.put(format!("{group}.adam_v/{k}"), t.clone());
        }
        self.put(format!("{group}.adam_step"), Tensor::scalar(state.step as f64));
    }

    pub fn adam(&self, group: &str, params: &ParamSet) -> Result<AdamState> {
        let mut st = AdamState::new(params);
        st.step = self.get(&format!("{group}.adam_step"))?.item() as u64;
        for (k, _) in params.iter() {
            st.m.insert(k.to_string(), self.get(&format!("{group}.adam_m/{k}"))?.clone());
            st.v.insert(k.to_string(), self.get(&format!("{group}.adam_v/{k}"))?.clone());
        }
        Ok(st)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = serde_json::to_vec(&self.manifest)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        out.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            let start = out.len();
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            let sum = checksum(name, &out[start..]);
            out.extend_from_slice(&sum);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8) != Some(MAGIC.as_slice()) {
            return Err(header_err("not a checkpoint (bad magic)"));
        }
        let version = r.u32().ok_or_else(|| header_err("truncated header"))?;
        if version != FORMAT_VERSION {
            return Err(header_err(format!("unsupported format version {version}")));
        }
        let mlen = r.u64().ok_or_else(|| header_err("truncated header"))? as usize;
        let mbytes = r.take(mlen).ok_or_else(|| header_err("truncated manifest"))?;
        let manifest: serde_json::Value =
            serde_json::from_slice(mbytes).map_err(|e| header_err(format!("manifest: {e}")))?;
        let count = r.u64().ok_or_else(|| header_err("truncated tensor count"))?;
        let mut tensors = BTreeMap::new();
        let mut last = String::from("<header>");
        for i in 0..count {
            let trunc = |after: &str| Error::Checkpoint {
                param: format!("tensor #{i} (after `{after}`)"),
                message: "truncated record".into(),
            };
            let nlen = r.u32().ok_or_else(|| trunc(&last))? as usize;
            let name = r.take(nlen).ok_or_else(|| trunc(&last))?;
            let name = String::from_utf8(name.to_vec()).map_err(|_| trunc(&last))?;
            let named = |message: &str| Error::Checkpoint {
                param: name.clone(),
                message: message.into(),
            };
            let ndim = r.u32().ok_or_else(|| named("truncated shape"))? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64().ok_or_else(|| named("truncated shape"))? as usize);
            }
            let n: usize = shape.iter().product();
            let payload = r
                .take(n.checked_mul(8).ok_or_else(|| named("absurd shape"))?)
                .ok_or_else(|| named("truncated payload"))?;
            let stored = r.take(32).ok_or_else(|| named("truncated checksum"))?;
            if stored != checksum(&name, payload) {
                return Err(named("corrupted payload (checksum mismatch)"));
            }
            let data = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| named(&e.to_string()))?;
            if tensors.insert(name.clone(), t).is_some() {
                return Err(named("duplicate tensor name"));
            }
            last = name;
        }
        if r.pos != bytes.len() {
            return Err(header_err("trailing bytes after last tensor"));
        }
        Ok(Self { manifest, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = ParamSet::new(Role::Encoder);
        p.insert_uniform("lstm.w_ih", &[8, 3], 1.0, &mut rng).unwrap();
        p.insert("odd", Tensor::vector(vec![f64::MIN_POSITIVE, -0.0, 1e300, 1.0 / 3.0]))
            .unwrap();
        let mut c = Checkpoint::new(serde_json::json!({"config_hash": "abc", "seed": 3}));
        c.put_params("encoder", &p);
        c.put_adam("encoder", &AdamState::new(&p));
        c
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back.manifest, c.manifest);
        for name in c.names() {
            let (a, b) = (c.get(name).unwrap(), back.get(name).unwrap());
            assert_eq!(a.shape(), b.shape());
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        let p = back.params("encoder", Role::Encoder).unwrap();
        assert_eq!(p.len(), 2);
    }

    #[test]
    fn corrupted_payload_names_the_parameter() {
        let c = sample();
        let mut bytes = c.to_bytes().unwrap();
        // flip a bit inside the payload of `encoder/odd`
        let needle = b"encoder/odd";
        let at = bytes.windows(needle.len()).position(|w| w == needle).unwrap();
        let payload_start = at + needle.len() + 4 + 8;
        bytes[payload_start + 3] ^= 0x10;
        match Checkpoint::from_bytes(&bytes) {
            Err(Error::Checkpoint { param, message }) => {
                assert_eq!(param, "encoder/odd");
                assert!(message.contains("corrupted"));
            }
            other => panic!("expected checkpoint error, got {other:?}"),
        }
    }

    #[test]
    fn truncation_and_bad_magic_are_reported() {
        let bytes = sample().to_bytes().unwrap();
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 5]),
            Err(Error::Checkpoint { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Checkpoint { .. })));
    }

    #[test]
    fn restore_rejects_shape_mismatch() {
        let c = sample();
        let mut p = ParamSet::new(Role::Encoder);
        p.insert_zeros("lstm.w_ih", &[8, 4]).unwrap();
        p.insert_zeros("odd", &[4]).unwrap();
        assert!(matches!(c.restore_into("encoder", &mut p), Err(Error::Contract(_))));
    }

    #[test]
    fn save_load_via_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        let c = sample();
        c.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), c);
    }
}
