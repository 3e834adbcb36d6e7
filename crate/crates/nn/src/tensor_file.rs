//! Binary tensor container shared by datasets and model files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "RTEN" | version: u32 | rank: u32 | dims: u32 * rank | payload: f32 * prod(dims)
//! ```
//!
//! The payload is row-major.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{NnError, Result};

pub const MAGIC: &[u8; 4] = b"RTEN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(NnError::Shape(format!(
                "dims {dims:?} need {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn from_f64(dims: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(dims, data.iter().map(|&v| v as f32).collect())
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f32] {
        let width: usize = self.dims[1..].iter().product();
        &self.data[i * width..(i + 1) * width]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = Cursor { bytes, pos: 0 };
        if cursor.take(4)? != MAGIC {
            return Err(NnError::Format("bad magic".into()));
        }
        let version = cursor.u32()?;
        if version != VERSION {
            return Err(NnError::Format(format!("unsupported version {version}")));
        }
        let rank = cursor.u32()? as usize;
        let dims = (0..rank)
            .map(|_| cursor.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let count: usize = dims.iter().product();
        let payload = cursor.take(count * 4)?;
        if cursor.pos != bytes.len() {
            return Err(NnError::Format(format!(
                "{} trailing bytes after payload",
                bytes.len() - cursor.pos
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self { dims, data })
    }

    pub fn write(&self, path: &Path) -> Result<String> {
        let bytes = self.to_bytes();
        fs::write(path, &bytes)?;
        Ok(sha256_hex(&bytes))
    }

    /// Reads a tensor, verifying the file's SHA-256 when `checksum` is given.
    pub fn read(path: &Path, checksum: Option<&str>) -> Result<Self> {
        let bytes = fs::read(path)?;
        if let Some(expected) = checksum {
            if sha256_hex(&bytes) != expected {
                return Err(NnError::Checksum(path.display().to_string()));
            }
        }
        Self::from_bytes(&bytes)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| NnError::Format("truncated tensor".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
