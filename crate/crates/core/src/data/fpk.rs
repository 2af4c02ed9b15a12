//! FPK1 tensor files: magic `FPK1`, then little-endian `u8` dtype,
//! `u8` ndim, `u32` dims, and the row-major payload.
//!
//! Dtype 0 is float32. Dtype 1 (float64) is an extension used by
//! checkpoints so weights round-trip bit-exactly.

use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"FPK1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32 = 0,
    F64 = 1,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

pub fn encode(t: &Tensor, dtype: Dtype) -> Result<Vec<u8>> {
    if t.shape().len() > u8::MAX as usize {
        return Err(Error::format(format!("{} dimensions exceed the FPK1 limit", t.shape().len())));
    }
    let mut out = Vec::with_capacity(6 + 4 * t.shape().len() + dtype.width() * t.len());
    out.extend_from_slice(MAGIC);
    out.push(dtype as u8);
    out.push(t.shape().len() as u8);
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| Error::format(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    match dtype {
        Dtype::F32 => t.data().iter().for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        Dtype::F64 => t.data().iter().for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
    }
    Ok(out)
}

/// Decodes one record from the front of `bytes`; returns the tensor, its
/// dtype and the number of bytes consumed.
pub fn decode_prefix(bytes: &[u8]) -> Result<(Tensor, Dtype, usize)> {
    let truncated = |what: &str| Error::format(format!("truncated FPK1 data: missing {what}"));
    if bytes.len() < 6 {
        return Err(truncated("header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format(format!("bad FPK1 magic {:?}", &bytes[..4])));
    }
    let dtype = match bytes[4] {
        0 => Dtype::F32,
        1 => Dtype::F64,
        c => return Err(Error::format(format!("unknown FPK1 dtype code {c}"))),
    };
    let ndim = bytes[5] as usize;
    let mut pos = 6;
    if bytes.len() < pos + 4 * ndim {
        return Err(truncated("dimensions"));
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(u32::from_le_bytes(bytes[pos..pos + 4].try_into().expect("4 bytes")) as usize);
        pos += 4;
    }
    let n: usize = shape.iter().product();
    let need = n
        .checked_mul(dtype.width())
        .ok_or_else(|| Error::format("FPK1 payload size overflows"))?;
    if bytes.len() - pos < need {
        return Err(Error::format(format!(
            "truncated FPK1 payload: expected {need} bytes, found {}",
            bytes.len() - pos
        )));
    }
    let payload = &bytes[pos..pos + need];
    let data: Vec<f64> = match dtype {
        Dtype::F32 => payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect(),
        Dtype::F64 => payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect(),
    };
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::format(format!("FPK1 shape {shape:?} has no elements")));
    }
    Ok((Tensor::new(shape, data)?, dtype, pos + need))
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    let (t, _, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(Error::format(format!("{} trailing bytes after FPK1 payload", bytes.len() - used)));
    }
    Ok(t)
}

pub fn write(path: &Path, t: &Tensor, dtype: Dtype) -> Result<()> {
    std::fs::write(path, encode(t, dtype)?)?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Tensor> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        e => e,
    })
}
