//! Grayscale PFM images: `Pf`, little-endian (negative scale), rows stored
//! bottom to top.

use std::path::Path;

use super::{read_file, write_file};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Encodes an `[H, W]` map. Values are stored as `f32`.
pub fn encode_pfm(image: &Tensor<f32>) -> Result<Vec<u8>> {
    let &[h, w] = image.shape() else {
        return Err(Error::Shape {
            op: "encode_pfm",
            expected: vec![0, 0],
            actual: image.shape().to_vec(),
        });
    };
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(h * w * 4);
    for row in image.data().chunks(w.max(1)).rev() {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_pfm(bytes: &[u8], file: &str) -> Result<Tensor<f32>> {
    let fail = |offset: usize, message: &str| Error::Format {
        file: file.to_string(),
        offset: offset as u64,
        message: message.to_string(),
    };
    let mut pos = 0;
    // Reads one whitespace-delimited token followed by a single whitespace.
    let mut token = || -> Result<(String, usize)> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos || pos >= bytes.len() {
            return Err(fail(start, "truncated header"));
        }
        let t = String::from_utf8_lossy(&bytes[start..pos]).into_owned();
        pos += 1;
        Ok((t, start))
    };
    let (magic, _) = token()?;
    if magic != "Pf" {
        return Err(fail(0, "expected grayscale \"Pf\" magic"));
    }
    let (ws, wo) = token()?;
    let w: usize = ws.parse().map_err(|_| fail(wo, "bad width"))?;
    let (hs, ho) = token()?;
    let h: usize = hs.parse().map_err(|_| fail(ho, "bad height"))?;
    let (ss, so) = token()?;
    let scale: f64 = ss.parse().map_err(|_| fail(so, "bad scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(fail(so, "scale must be nonzero"));
    }
    let little = scale < 0.0;
    let start = so + ss.len() + 1;
    let payload = &bytes[start..];
    if payload.len() != h * w * 4 {
        return Err(fail(start, &format!("payload is {} bytes, {w}x{h} needs {}", payload.len(), h * w * 4)));
    }
    let mut data = vec![0f32; h * w];
    for (r, row) in payload.chunks_exact(w.max(1) * 4).enumerate().take(h) {
        let dst = (h - 1 - r) * w;
        for (c, px) in row.chunks_exact(4).enumerate() {
            let b: [u8; 4] = px.try_into().expect("4 bytes");
            data[dst + c] = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        }
    }
    Tensor::from_vec(&[h, w], data)
}

pub fn write_pfm(path: &Path, image: &Tensor<f32>) -> Result<()> {
    write_file(path, &encode_pfm(image)?)
}

pub fn read_pfm(path: &Path) -> Result<Tensor<f32>> {
    decode_pfm(&read_file(path)?, &path.display().to_string())
}
