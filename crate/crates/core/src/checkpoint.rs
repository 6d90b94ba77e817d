//! Binary tensor checkpoints and their text manifests.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! b"IMSVD001"
//! u64 tensor count
//! (u64 rows, u64 cols) per tensor
//! f64 values, tensor by tensor, row-major
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{ImsvdError, Result};
use crate::tensor::Matrix;

pub const MAGIC: &[u8; 8] = b"IMSVD001";

pub fn encode_tensors(tensors: &[&Matrix]) -> Vec<u8> {
    let floats: usize = tensors.iter().map(|t| t.len()).sum();
    let mut out = Vec::with_capacity(16 + 16 * tensors.len() + 8 * floats);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
    }
    for t in tensors {
        for v in t.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<Matrix>> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(ImsvdError::format(format!(
            "checkpoint does not start with {:?}",
            std::str::from_utf8(MAGIC).unwrap()
        )));
    }
    let u64_at = |at: usize| -> Result<u64> {
        bytes
            .get(at..at + 8)
            .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| {
                ImsvdError::format(format!(
                    "checkpoint truncated: {} bytes, need more than {at}",
                    bytes.len()
                ))
            })
    };
    let count = u64_at(8)? as usize;
    let mut shapes = Vec::with_capacity(count.min(1 << 16));
    let mut at = 16;
    for _ in 0..count {
        shapes.push((u64_at(at)? as usize, u64_at(at + 8)? as usize));
        at += 16;
    }
    let floats: usize = shapes.iter().map(|(r, c)| r * c).sum();
    let need = at + 8 * floats;
    if bytes.len() != need {
        return Err(ImsvdError::format(format!(
            "checkpoint has {} bytes, header describes {need}",
            bytes.len()
        )));
    }
    let mut out = Vec::with_capacity(count);
    for (r, c) in shapes {
        let data = bytes[at..at + 8 * r * c]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        at += 8 * r * c;
        out.push(Matrix::from_vec(r, c, data)?);
    }
    Ok(out)
}

pub fn save_tensors(path: &Path, tensors: &[&Matrix]) -> Result<()> {
    fs::write(path, encode_tensors(tensors)).map_err(|e| ImsvdError::io(path, e))
}

pub fn load_tensors(path: &Path) -> Result<Vec<Matrix>> {
    decode_tensors(&fs::read(path).map_err(|e| ImsvdError::io(path, e))?)
}

/// Sidecar path of a checkpoint: `<path>.manifest`.
pub fn manifest_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

/// Ordered `key = value` text file.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    entries: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.entries.insert(key.to_string(), value.to_string());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| ImsvdError::format(format!("manifest is missing {key:?}")))
    }

    pub fn parse_value<T: std::str::FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.require(key)?
            .parse()
            .map_err(|e| ImsvdError::format(format!("manifest key {key:?}: {e}")))
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Manifest::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                ImsvdError::format(format!("line {}: expected key = value", n + 1))
            })?;
            m.set(k.trim(), v.trim());
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| ImsvdError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).map_err(|e| ImsvdError::io(path, e))?)
    }
}
