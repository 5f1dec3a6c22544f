//! Self-describing parameter container.
//!
//! Layout: 8-byte magic, little-endian `u64` header length, JSON header,
//! every array as little-endian `f64`, then the SHA-256 of all preceding
//! bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::params::ParameterSet;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"FOTPARM1";
const DIGEST_LEN: usize = 32;

#[derive(Serialize, Deserialize)]
struct Header {
    fingerprint: String,
    dtype: String,
    metadata: serde_json::Value,
    arrays: Vec<ArrayEntry>,
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
}

/// Contents of a checkpoint file.
#[derive(Clone, Debug, PartialEq)]
pub struct Container<T> {
    pub fingerprint: String,
    pub metadata: serde_json::Value,
    pub arrays: ParameterSet<T>,
}

impl<T: Scalar> Container<T> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            fingerprint: self.fingerprint.clone(),
            dtype: T::DTYPE.to_string(),
            metadata: self.metadata.clone(),
            arrays: self
                .arrays
                .iter()
                .map(|(n, t)| ArrayEntry {
                    name: n.to_string(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + 8 * self.arrays.count() + DIGEST_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in self.arrays.iter() {
            for &v in t.data() {
                out.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::CorruptCheckpoint(m.to_string());
        if bytes.len() < MAGIC.len() + 8 + DIGEST_LEN || &bytes[..8] != MAGIC {
            return Err(corrupt("missing header"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch"));
        }
        let hlen = u64::from_le_bytes(body[8..16].try_into().expect("8 bytes")) as usize;
        let json = body
            .get(16..16usize.saturating_add(hlen))
            .ok_or_else(|| corrupt("header length exceeds file"))?;
        let header: Header =
            serde_json::from_slice(json).map_err(|e| corrupt(&format!("header: {e}")))?;
        let mut data = &body[16 + hlen..];
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for a in header.arrays {
            let n: usize = a.shape.iter().product();
            let need = n.checked_mul(8).ok_or_else(|| corrupt("array too large"))?;
            if data.len() < need {
                return Err(corrupt(&format!("array {} truncated", a.name)));
            }
            let values = data[..need]
                .chunks_exact(8)
                .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
                .collect();
            data = &data[need..];
            arrays.push((a.name, Tensor::new(a.shape, values)?));
        }
        if !data.is_empty() {
            return Err(corrupt("trailing bytes after arrays"));
        }
        Ok(Self {
            fingerprint: header.fingerprint,
            metadata: header.metadata,
            arrays: ParameterSet::from_entries(arrays),
        })
    }

    /// Writes through a temporary file and a rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    /// Loads a container, rejecting a fingerprint other than `expected`.
    pub fn load(path: &Path, expected: Option<&str>) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let c = Self::from_bytes(&bytes)?;
        if let Some(want) = expected {
            if c.fingerprint != want {
                return Err(Error::FingerprintMismatch {
                    expected: want.to_string(),
                    found: c.fingerprint,
                });
            }
        }
        Ok(c)
    }
}

/// Hex SHA-256 stored at the end of a checkpoint file.
pub fn recorded_checksum(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < DIGEST_LEN {
        return Err(Error::CorruptCheckpoint("file shorter than checksum".into()));
    }
    Ok(hex::encode(&bytes[bytes.len() - DIGEST_LEN..]))
}

pub fn save_parameters<T: Scalar>(path: &Path, fingerprint: &str, params: &ParameterSet<T>) -> Result<()> {
    Container {
        fingerprint: fingerprint.to_string(),
        metadata: serde_json::json!({ "created_unix": unix_now() }),
        arrays: params.clone(),
    }
    .save(path)
}

pub fn load_parameters<T: Scalar>(path: &Path, fingerprint: &str) -> Result<ParameterSet<T>> {
    Ok(Container::load(path, Some(fingerprint))?.arrays)
}

pub(crate) fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}
