//! Binary tensor file format ".tdct".
//!
//! Layout: magic bytes `TDCT`, one version byte (1), one dtype byte
//! (1 = f32, 2 = f64), one ndim byte, `ndim` little-endian u64 dims, then
//! the row-major payload in little-endian order. Values are widened to f64
//! on read; f32 payloads widen exactly.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Tensor4};

const MAGIC: &[u8; 4] = b"TDCT";
const VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn code(self) -> u8 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(Dtype::F32),
            2 => Ok(Dtype::F64),
            other => Err(Error::Format(format!("unsupported dtype code {other}"))),
        }
    }

    fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// A decoded tensor file: dims as stored, payload widened to f64.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub dtype: Dtype,
    pub dims: Vec<u64>,
    pub data: Vec<f64>,
}

pub fn encode(dims: &[u64], data: &[f64], dtype: Dtype) -> Result<Vec<u8>> {
    if dims.is_empty() || dims.len() > 8 {
        return Err(Error::Format(format!(
            "tensor rank {} outside supported 1..=8",
            dims.len()
        )));
    }
    let count = dims
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("dimension product overflows".into()))?;
    if count as usize != data.len() {
        return Err(Error::ShapeMismatch(format!(
            "payload length {} does not match dims {:?}",
            data.len(),
            dims
        )));
    }
    let mut out = Vec::with_capacity(7 + dims.len() * 8 + data.len() * dtype.size());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(dtype.code());
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    match dtype {
        Dtype::F32 => {
            for &v in data {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Dtype::F64 => {
            for &v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<TensorFile> {
    if bytes.len() < 7 {
        return Err(Error::Format("file too short for header".into()));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format("bad magic bytes, not a tensor file".into()));
    }
    if bytes[4] != VERSION {
        return Err(Error::Format(format!(
            "unsupported version {}, expected {VERSION}",
            bytes[4]
        )));
    }
    let dtype = Dtype::from_code(bytes[5])?;
    let ndim = bytes[6] as usize;
    if ndim == 0 || ndim > 8 {
        return Err(Error::Format(format!("tensor rank {ndim} outside 1..=8")));
    }
    let header_len = 7 + ndim * 8;
    if bytes.len() < header_len {
        return Err(Error::Format("truncated dimension list".into()));
    }
    let mut dims = Vec::with_capacity(ndim);
    for i in 0..ndim {
        let start = 7 + i * 8;
        dims.push(u64::from_le_bytes(
            bytes[start..start + 8].try_into().unwrap(),
        ));
    }
    let count = dims
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("dimension product overflows".into()))?
        as usize;
    let want = header_len + count * dtype.size();
    if bytes.len() != want {
        return Err(Error::Format(format!(
            "payload size mismatch: file has {} bytes, header implies {}",
            bytes.len(),
            want
        )));
    }
    let body = &bytes[header_len..];
    let data = match dtype {
        Dtype::F32 => body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F64 => body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    Ok(TensorFile { dtype, dims, data })
}

pub fn write_tdct(path: &Path, dims: &[u64], data: &[f64], dtype: Dtype) -> Result<()> {
    fs::write(path, encode(dims, data, dtype)?)?;
    Ok(())
}

pub fn read_tdct(path: &Path) -> Result<TensorFile> {
    decode(&fs::read(path)?)
}

pub fn write_tensor4(path: &Path, t: &Tensor4) -> Result<()> {
    let dims: Vec<u64> = t.dims().iter().map(|&d| d as u64).collect();
    write_tdct(path, &dims, t.data(), Dtype::F64)
}

pub fn read_tensor4(path: &Path) -> Result<Tensor4> {
    let f = read_tdct(path)?;
    if f.dims.len() != 4 {
        return Err(Error::Format(format!(
            "{} is rank {}, expected 4",
            path.display(),
            f.dims.len()
        )));
    }
    let dims = [
        f.dims[0] as usize,
        f.dims[1] as usize,
        f.dims[2] as usize,
        f.dims[3] as usize,
    ];
    Tensor4::from_vec(dims, f.data)
}

pub fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    write_tdct(path, &[m.rows() as u64, m.cols() as u64], m.data(), Dtype::F64)
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    let f = read_tdct(path)?;
    if f.dims.len() != 2 {
        return Err(Error::Format(format!(
            "{} is rank {}, expected 2",
            path.display(),
            f.dims.len()
        )));
    }
    Matrix::from_vec(f.dims[0] as usize, f.dims[1] as usize, f.data)
}
