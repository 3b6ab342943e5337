//! Binary container for named tensors plus a structured header.
//!
//! Layout: 8-byte magic, little-endian `u32` version, `u64` header length,
//! JSON header, raw little-endian tensor data in header order, SHA-256 of
//! everything before it.

use std::path::Path;

use autograd::{Entry, ParamStore, Scalar, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PSCCTNS\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    dtype: String,
    tensors: Vec<TensorInfo>,
    meta: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorFile<T> {
    pub meta: serde_json::Value,
    pub entries: Vec<Entry<T>>,
}

impl<T: Scalar> TensorFile<T> {
    pub fn from_store(store: &ParamStore<T>, meta: serde_json::Value) -> Self {
        Self { meta, entries: store.entries().to_vec() }
    }

    pub fn encode(&self) -> Vec<u8> {
        let header = Header {
            dtype: T::NAME.to_string(),
            tensors: self
                .entries
                .iter()
                .map(|e| TensorInfo { name: e.name.clone(), shape: e.value.shape().to_vec(), trainable: e.trainable })
                .collect(),
            meta: self.meta.clone(),
        };
        let hjson = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(hjson.len() as u64).to_le_bytes());
        out.extend_from_slice(&hjson);
        for e in &self.entries {
            for v in e.value.data() {
                v.write_le(&mut out);
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(digest.as_slice());
        out
    }

    /// Decodes and verifies a container. Data stored in another precision is converted.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 + 4 + 8 + 32 {
            return Err(Error::Checkpoint("file too short".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checkpoint("digest mismatch, file is corrupt or was modified".into()));
        }
        if &body[..8] != MAGIC {
            return Err(Error::Checkpoint("not a tensor file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}, expected {VERSION}")));
        }
        let hlen = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
        let hend = 20usize.checked_add(hlen).filter(|&e| e <= body.len()).ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
        let header: Header = serde_json::from_slice(&body[20..hend]).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        let width = match header.dtype.as_str() {
            "f32" => 4,
            "f64" => 8,
            d => return Err(Error::Checkpoint(format!("unknown dtype {d}"))),
        };
        let total: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
        let data = &body[hend..];
        if data.len() != total * width {
            return Err(Error::Checkpoint(format!("data section has {} bytes, header describes {}", data.len(), total * width)));
        }
        let mut pos = 0;
        let mut entries = Vec::with_capacity(header.tensors.len());
        for t in header.tensors {
            let n: usize = t.shape.iter().product();
            let vals: Vec<T> = (0..n)
                .map(|i| {
                    let b = &data[pos + i * width..pos + (i + 1) * width];
                    if width == 4 {
                        T::from_f64_lossy(f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
                    } else {
                        T::from_f64_lossy(f64::from_le_bytes(b.try_into().expect("8 bytes")))
                    }
                })
                .collect();
            pos += n * width;
            entries.push(Entry { name: t.name, value: Tensor::new(t.shape, vals)?, trainable: t.trainable });
        }
        Ok(Self { meta: header.meta, entries })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::decode(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TensorFile<f64> {
        let mut store = ParamStore::new();
        store.add("a.weight", Tensor::new(vec![2, 2], vec![1.0, -2.5, 3.25, 1e-300]).unwrap(), true);
        store.add("a.running_mean", Tensor::new(vec![1], vec![0.5]).unwrap(), false);
        TensorFile::from_store(&store, serde_json::json!({"epoch": 3}))
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let bytes = sample().encode();
        let back = TensorFile::<f64>::decode(&bytes).unwrap();
        assert_eq!(back, sample());
        assert_eq!(back.encode(), bytes);
    }

    #[test]
    fn tampering_is_detected() {
        let mut bytes = sample().encode();
        let i = bytes.len() - 40;
        bytes[i] ^= 1;
        assert!(matches!(TensorFile::<f64>::decode(&bytes), Err(Error::Checkpoint(_))));
        assert!(TensorFile::<f64>::decode(&bytes[..10]).is_err());
    }

    #[test]
    fn precision_converts_on_load() {
        let bytes = sample().encode();
        let f = TensorFile::<f32>::decode(&bytes).unwrap();
        assert_eq!(f.entries[0].value.data()[1], -2.5f32);
    }
}
