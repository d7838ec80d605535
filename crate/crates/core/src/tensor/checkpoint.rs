//! Binary container of named f64 tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes  "RTGRPOTS"
//! version   u32      1
//! meta_len  u32      length of the UTF-8 JSON metadata that follows
//! meta      bytes
//! count     u32      number of tensors
//! per tensor:
//!   name_len u32, name bytes (UTF-8)
//!   rank     u32, dims u64 × rank
//!   data     f64 × product(dims), IEEE-754 bit patterns
//! ```
//!
//! Values are stored as raw bit patterns, so a save/load cycle is exact.

use std::io::{Read, Write};
use std::path::Path;

use super::Tensor;

const MAGIC: &[u8; 8] = b"RTGRPOTS";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a tensor checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint has no tensor named {0:?}")]
    Missing(String),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    /// Free-form JSON metadata (kind, step, architecture).
    pub meta: String,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(meta: impl Into<String>) -> Self {
        Checkpoint { meta: meta.into(), tensors: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.push((name.into(), tensor));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, CheckpointError> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| CheckpointError::Missing(name.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        out.extend_from_slice(self.meta.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| CheckpointError::BadMagic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let meta = read_string(&mut r)?;
        let count = read_u32(&mut r)? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name = read_string(&mut r)?;
            let rank = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u64(&mut r)? as usize);
            }
            let n: usize = shape.iter().product();
            if n.checked_mul(8).is_none_or(|len| len > r.len()) {
                return Err(CheckpointError::Corrupt(format!("tensor {name:?} data truncated")));
            }
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(f64::from_bits(read_u64(&mut r)?));
            }
            let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
            tensors.push((name, t));
        }
        if !r.is_empty() {
            return Err(CheckpointError::Corrupt(format!("{} trailing bytes", r.len())));
        }
        Ok(Checkpoint { meta, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }
}

fn truncated(_: std::io::Error) -> CheckpointError {
    CheckpointError::Corrupt("unexpected end of data".into())
}

fn read_u32(r: &mut &[u8]) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut &[u8]) -> Result<u64, CheckpointError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn read_string(r: &mut &[u8]) -> Result<String, CheckpointError> {
    let len = read_u32(r)? as usize;
    if len > r.len() {
        return Err(CheckpointError::Corrupt("string length exceeds data".into()));
    }
    let (head, tail) = r.split_at(len);
    *r = tail;
    String::from_utf8(head.to_vec()).map_err(|e| CheckpointError::Corrupt(e.to_string()))
}
