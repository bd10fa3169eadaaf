//! Binary tensor files.
//!
//! Layout: magic `VTDL`, version byte, rank byte, one little-endian `u32` per
//! dimension, then the row-major payload. Version 1 stores `f32` elements;
//! version 2 stores `f64` and is used where bit-exact restoration matters
//! (training checkpoints).

use std::fs;
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"VTDL";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    fn version(self) -> u8 {
        match self {
            Precision::F32 => 1,
            Precision::F64 => 2,
        }
    }

    fn width(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

pub fn encode_tensor(t: &Tensor, precision: Precision) -> Result<Vec<u8>> {
    let rank = u8::try_from(t.rank()).map_err(|_| Error::ShapeIncompatible(t.shape().to_vec()))?;
    let mut out = Vec::with_capacity(6 + 4 * t.rank() + precision.width() * t.len());
    out.extend_from_slice(MAGIC);
    out.push(precision.version());
    out.push(rank);
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| Error::ShapeIncompatible(t.shape().to_vec()))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    match precision {
        Precision::F32 => {
            for &v in t.data() {
                let f = v as f32;
                if !f.is_finite() {
                    return Err(Error::NonFinite);
                }
                out.extend_from_slice(&f.to_le_bytes());
            }
        }
        Precision::F64 => {
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let header = bytes.get(..6).ok_or(Error::TruncatedPayload { expected: 6, found: bytes.len() })?;
    let magic: [u8; 4] = header[..4].try_into().unwrap();
    if &magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let precision = match header[4] {
        1 => Precision::F32,
        2 => Precision::F64,
        v => return Err(Error::VersionMismatch(v)),
    };
    let rank = header[5] as usize;
    let dims_end = 6 + 4 * rank;
    let dims = bytes.get(6..dims_end).ok_or(Error::TruncatedPayload { expected: dims_end, found: bytes.len() })?;
    let shape: Vec<usize> = dims.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize).collect();
    let count: usize = shape.iter().product();
    let expected = dims_end + count * precision.width();
    if bytes.len() < expected {
        return Err(Error::TruncatedPayload { expected, found: bytes.len() });
    }
    let payload = &bytes[dims_end..expected];
    let data = match precision {
        Precision::F32 => {
            payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect()
        }
        Precision::F64 => payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
    };
    Tensor::new(shape, data)
}

/// Writes `t` in the compact `f32` format.
pub fn save_tensor(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    write(t, path.as_ref(), Precision::F32)
}

/// Writes `t` with full `f64` precision.
pub fn save_tensor_exact(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    write(t, path.as_ref(), Precision::F64)
}

fn write(t: &Tensor, path: &Path, precision: Precision) -> Result<()> {
    let bytes = encode_tensor(t, precision)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes)
}
