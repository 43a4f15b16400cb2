//! Dense `f32` tensors and their binary encoding.
//!
//! Encoding (all little-endian): `u32` rank, `rank × u64` dimensions, then the
//! row-major `f32` payload. Over JSON the same bytes travel base64-encoded.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct ImageTensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::LengthMismatch {
                left: data.len(),
                right: expected,
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image tensor".into()));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Same shape, new payload. The caller guarantees the length.
    pub(crate) fn with_data(&self, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Self {
            shape: self.shape.clone(),
            data,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 8 * self.shape.len() + 4 * self.data.len());
        out.extend_from_slice(&(self.shape.len() as u32).to_le_bytes());
        for &d in &self.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let short = || Error::invalid("truncated tensor encoding");
        let rank_bytes: [u8; 4] = bytes.get(..4).ok_or_else(short)?.try_into().unwrap();
        let rank = u32::from_le_bytes(rank_bytes) as usize;
        let header_len = 4 + 8 * rank;
        let header = bytes.get(4..header_len).ok_or_else(short)?;
        let shape: Vec<usize> = header
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        let payload = &bytes[header_len..];
        if !payload.len().is_multiple_of(4) {
            return Err(short());
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(shape, data)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

impl From<ImageTensor> for String {
    fn from(t: ImageTensor) -> String {
        STANDARD.encode(t.to_bytes())
    }
}

impl TryFrom<String> for ImageTensor {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        let bytes = STANDARD
            .decode(s.as_bytes())
            .map_err(|e| Error::invalid(format!("tensor is not valid base64: {e}")))?;
        Self::from_bytes(&bytes)
    }
}
