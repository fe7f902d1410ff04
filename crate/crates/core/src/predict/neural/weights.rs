//! Weight file format.
//!
//! 16-byte header (`MIMICNW1` then the architecture hash, little-endian
//! u64), the input width and height as little-endian u32, then every
//! parameter as a little-endian IEEE-754 f64 in layout order: conv1 w/b,
//! conv2 w/b, recurrent input/hidden/bias, projection w/b, deconv1 w/b,
//! deconv2 w/b. Loading verifies the hash and the exact byte count.

use std::path::Path;

use thiserror::Error;

use super::{ArchSpec, NeuralWeights};

pub(crate) const MAGIC: [u8; 8] = *b"MIMICNW1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WeightsError {
    #[error("not a weight file: bad magic")]
    BadMagic,
    #[error("architecture hash mismatch: file {found:016x}, expected {expected:016x}")]
    ArchMismatch { expected: u64, found: u64 },
    #[error("network input {width}x{height} is invalid (both sides must be multiples of 4)")]
    BadDims { width: usize, height: usize },
    #[error("weight file truncated: expected {expected} bytes of parameters, got {got}")]
    Truncated { expected: usize, got: usize },
    #[error("{0} trailing bytes after parameters")]
    TrailingData(usize),
    #[error("weight file I/O: {0}")]
    Io(String),
}

impl NeuralWeights {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.params.len() * 8);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&self.arch.hash().to_le_bytes());
        out.extend_from_slice(&(self.arch.in_w() as u32).to_le_bytes());
        out.extend_from_slice(&(self.arch.in_h() as u32).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WeightsError> {
        if bytes.len() < 24 || bytes[..8] != MAGIC {
            return Err(WeightsError::BadMagic);
        }
        let stored_hash = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let in_w = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
        let in_h = u32::from_le_bytes(bytes[20..24].try_into().unwrap()) as usize;
        let arch = ArchSpec::new(in_w, in_h)?;
        if arch.hash() != stored_hash {
            return Err(WeightsError::ArchMismatch {
                expected: arch.hash(),
                found: stored_hash,
            });
        }
        let body = &bytes[24..];
        let expected = arch.param_count() * 8;
        if body.len() < expected {
            return Err(WeightsError::Truncated {
                expected,
                got: body.len(),
            });
        }
        if body.len() > expected {
            return Err(WeightsError::TrailingData(body.len() - expected));
        }
        let params = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { arch, params })
    }

    pub fn save(&self, path: &Path) -> Result<(), WeightsError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| WeightsError::Io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, WeightsError> {
        let bytes = std::fs::read(path).map_err(|e| WeightsError::Io(e.to_string()))?;
        Self::from_bytes(&bytes)
    }
}
