//! The RTEN tensor container.
//!
//! ```text
//! "RTEN" | version u8 = 1 | header_len u32 LE | JSON header | LE payload
//! ```
//!
//! The header is `{"dtype":"f32"|"f64","shape":[..],"layout":"row-major"}`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_file, write_file};
use crate::error::{Error, Result};
use crate::tensor::{DType, Real, Tensor};

pub const MAGIC: &[u8; 4] = b"RTEN";
pub const VERSION: u8 = 1;
pub const LAYOUT: &str = "row-major";
const PREAMBLE: usize = 4 + 1 + 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RtenHeader {
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub layout: String,
}

/// A decoded container of either element type.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    /// Converts to `T`, widening or narrowing as needed.
    pub fn into_tensor<T: Real>(self) -> Tensor<T> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        }
    }
}

pub fn encode<T: Real>(tensor: &Tensor<T>) -> Vec<u8> {
    let header = RtenHeader {
        dtype: T::DTYPE,
        shape: tensor.shape().to_vec(),
        layout: LAYOUT.to_string(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(PREAMBLE + json.len() + tensor.len() * T::DTYPE.size());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    match T::DTYPE {
        DType::F32 => {
            for v in tensor.data() {
                out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
            }
        }
        DType::F64 => {
            for v in tensor.data() {
                out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
            }
        }
    }
    out
}

/// Decodes a container. `file` names the source in error messages.
pub fn decode(bytes: &[u8], file: &str) -> Result<AnyTensor> {
    let fail = |offset: usize, message: String| Error::Format {
        file: file.to_string(),
        offset: offset as u64,
        message,
    };
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(fail(0, "bad magic, expected \"RTEN\"".into()));
    }
    if bytes.len() < 5 {
        return Err(fail(4, "truncated before version".into()));
    }
    if bytes[4] != VERSION {
        return Err(fail(4, format!("unsupported version {}", bytes[4])));
    }
    if bytes.len() < PREAMBLE {
        return Err(fail(5, "truncated header length".into()));
    }
    let header_len = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let payload_start = PREAMBLE
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| fail(5, format!("header length {header_len} exceeds file size {}", bytes.len())))?;
    let header: RtenHeader = serde_json::from_slice(&bytes[PREAMBLE..payload_start])
        .map_err(|e| fail(PREAMBLE, format!("invalid header: {e}")))?;
    if header.layout != LAYOUT {
        return Err(fail(PREAMBLE, format!("unsupported layout {:?}", header.layout)));
    }
    let count = header
        .shape
        .iter()
        .try_fold(1usize, |a, &b| a.checked_mul(b))
        .ok_or_else(|| fail(PREAMBLE, "shape overflows".into()))?;
    let payload = &bytes[payload_start..];
    let expected = count.saturating_mul(header.dtype.size());
    if payload.len() != expected {
        return Err(fail(
            payload_start,
            format!("payload is {} bytes, shape {:?} needs {expected}", payload.len(), header.shape),
        ));
    }
    Ok(match header.dtype {
        DType::F32 => {
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            AnyTensor::F32(Tensor::from_vec(&header.shape, data)?)
        }
        DType::F64 => {
            let data = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            AnyTensor::F64(Tensor::from_vec(&header.shape, data)?)
        }
    })
}

pub fn write_rten<T: Real>(path: &Path, tensor: &Tensor<T>) -> Result<()> {
    write_file(path, &encode(tensor))
}

pub fn read_rten(path: &Path) -> Result<AnyTensor> {
    decode(&read_file(path)?, &path.display().to_string())
}

/// Reads a container that must hold `T` elements.
pub fn read_rten_as<T: Real>(path: &Path) -> Result<Tensor<T>> {
    let any = read_rten(path)?;
    if any.dtype() != T::DTYPE {
        return Err(Error::Format {
            file: path.display().to_string(),
            offset: PREAMBLE as u64,
            message: format!("expected dtype {:?}, found {:?}", T::DTYPE, any.dtype()),
        });
    }
    Ok(any.into_tensor())
}
