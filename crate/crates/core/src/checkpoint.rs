//! Binary checkpoint container for named tensors.
//!
//! Layout: 4-byte magic, little-endian `u32` format version, little-endian
//! `u64` header length, a JSON header describing the payload, then the raw
//! tensor entries as little-endian `f64`s. Saving the same checkpoint twice
//! produces byte-identical files, and a load/save round trip preserves every
//! bit of every value.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"STCP";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    config_hash: String,
    meta: Map<String, Value>,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    /// Offset into the payload, in `f64` elements.
    offset: usize,
}

/// An in-memory checkpoint: a kind tag, the producing configuration's hash,
/// free-form JSON metadata, and an ordered list of named tensors.
pub struct Checkpoint {
    pub kind: String,
    pub config_hash: String,
    pub meta: Map<String, Value>,
    tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>, config_hash: impl Into<String>) -> Self {
        Checkpoint {
            kind: kind.into(),
            config_hash: config_hash.into(),
            meta: Map::new(),
            tensors: Vec::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.push((name.into(), tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Remove and return a tensor, erroring if it is absent.
    pub fn take(&mut self, name: &str) -> Result<Tensor> {
        let idx = self
            .tensors
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::Parse { line: 0, detail: format!("checkpoint has no tensor named {name:?}") })?;
        Ok(self.tensors.remove(idx).1)
    }

    pub fn tensor_names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _)| n.as_str())
    }

    pub fn set_meta(&mut self, key: &str, value: Value) {
        self.meta.insert(key.to_string(), value);
    }

    pub fn meta_str(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Parse { line: 0, detail: format!("checkpoint meta missing string field {key:?}") })
    }

    /// Expect a particular kind tag, erroring with both names otherwise.
    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Usage(format!("expected a {kind:?} checkpoint, found {:?}", self.kind)));
        }
        Ok(())
    }

    /// Serialize to the container byte format.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0usize;
        let entries: Vec<TensorEntry> = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let e = TensorEntry { name: name.clone(), rows: t.rows(), cols: t.cols(), offset };
                offset += t.len();
                e
            })
            .collect();
        let header = Header {
            kind: self.kind.clone(),
            config_hash: self.config_hash.clone(),
            meta: self.meta.clone(),
            tensors: entries,
        };
        let header_bytes = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + header_bytes.len() + offset * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&header_bytes);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Write atomically: serialize, write to a sibling temp file, rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, &bytes)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |detail: String| Error::Parse { line: 0, detail };
        if bytes.len() < 16 {
            return Err(bad("checkpoint shorter than its fixed header".into()));
        }
        if &bytes[0..4] != MAGIC {
            return Err(bad("bad magic; not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let payload_start = 16 + header_len;
        if bytes.len() < payload_start {
            return Err(bad("checkpoint truncated inside JSON header".into()));
        }
        let header: Header = serde_json::from_slice(&bytes[16..payload_start])?;
        let payload = &bytes[payload_start..];
        if payload.len() % 8 != 0 {
            return Err(bad("payload is not a whole number of f64 values".into()));
        }
        let total = payload.len() / 8;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in &header.tensors {
            let len = e.rows * e.cols;
            if e.offset + len > total {
                return Err(bad(format!("tensor {:?} extends past the payload", e.name)));
            }
            let mut data = Vec::with_capacity(len);
            for i in 0..len {
                let at = (e.offset + i) * 8;
                data.push(f64::from_le_bytes(payload[at..at + 8].try_into().unwrap()));
            }
            tensors.push((e.name.clone(), Tensor::from_vec(e.rows, e.cols, data)?));
        }
        Ok(Checkpoint { kind: header.kind, config_hash: header.config_hash, meta: header.meta, tensors })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingArtifact(path.display().to_string())
            } else {
                Error::Io(e)
            }
        })?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut ck = Checkpoint::new("model", "abc123");
        ck.set_meta("note", Value::String("hello".into()));
        // Values chosen to stress bit-exactness: negative zero, subnormals,
        // extremes, and NaN-free irrationals.
        let t = Tensor::from_vec(2, 3, vec![-0.0, f64::MIN_POSITIVE / 2.0, f64::MAX, 1.0 / 3.0, -1e-300, 2.0_f64.sqrt()]).unwrap();
        ck.insert("weights", t);
        ck.insert("empty", Tensor::zeros(0, 4));
        ck
    }

    #[test]
    fn round_trip_is_bit_exact_and_byte_identical() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.kind, "model");
        assert_eq!(back.config_hash, "abc123");
        assert_eq!(back.meta_str("note").unwrap(), "hello");
        let orig = ck.get("weights").unwrap();
        let loaded = back.get("weights").unwrap();
        assert_eq!(orig.shape(), loaded.shape());
        for (a, b) in orig.data().iter().zip(loaded.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back.get("empty").unwrap().shape(), (0, 4));
        // Serializing the loaded copy reproduces the original bytes exactly.
        assert_eq!(bytes, back.to_bytes().unwrap());
    }

    #[test]
    fn save_and_load_through_the_filesystem() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        sample().save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.tensor_names().collect::<Vec<_>>(), vec!["weights", "empty"]);
    }

    #[test]
    fn corrupt_and_missing_files_are_reported() {
        assert!(matches!(
            Checkpoint::load(Path::new("/nonexistent/never.ckpt")),
            Err(Error::MissingArtifact(_))
        ));
        assert!(Checkpoint::from_bytes(b"not a checkpoint").is_err());
        let mut bytes = sample().to_bytes().unwrap();
        bytes[0] = b'X';
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }
}
