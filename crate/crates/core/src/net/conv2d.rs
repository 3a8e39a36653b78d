//! 3x3 "same" convolutions on HWC buffers via im2col and gemm.

use rand::Rng;

use crate::error::{ensure, Result};
use crate::pointconv::glorot_uniform;
use crate::tensor::{gemm, Real, Tensor, Transpose};

pub const KSIZE: usize = 3;

/// Kernel `[3, 3, C_in, C_out]` and bias `[C_out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> Conv2d<T> {
    pub fn init<R: Rng + ?Sized>(c_in: usize, c_out: usize, rng: &mut R) -> Self {
        let fan = KSIZE * KSIZE;
        Self {
            kernel: glorot_uniform(&[KSIZE, KSIZE, c_in, c_out], fan * c_in, fan * c_out, rng),
            bias: Tensor::zeros(&[c_out]),
        }
    }
}

fn kernel_dims(kernel: &[usize]) -> Result<(usize, usize)> {
    ensure!(
        kernel.len() == 4 && kernel[0] == KSIZE && kernel[1] == KSIZE,
        "conv2d kernel must be [3, 3, C_in, C_out], got {kernel:?}"
    );
    Ok((kernel[2], kernel[3]))
}

/// Rows are output pixels, columns `(ky, kx, c)`; out-of-image taps are 0.
fn im2col<T: Real>(input: &[T], h: usize, w: usize, c: usize) -> Vec<T> {
    let row = KSIZE * KSIZE * c;
    let mut cols = vec![T::zero(); h * w * row];
    for y in 0..h {
        for x in 0..w {
            let dst = &mut cols[(y * w + x) * row..(y * w + x + 1) * row];
            for ky in 0..KSIZE {
                let sy = y as isize + ky as isize - 1;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kx in 0..KSIZE {
                    let sx = x as isize + kx as isize - 1;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let src = (sy as usize * w + sx as usize) * c;
                    let off = (ky * KSIZE + kx) * c;
                    dst[off..off + c].copy_from_slice(&input[src..src + c]);
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(cols: &[T], h: usize, w: usize, c: usize) -> Vec<T> {
    let row = KSIZE * KSIZE * c;
    let mut out = vec![T::zero(); h * w * c];
    for y in 0..h {
        for x in 0..w {
            let src = &cols[(y * w + x) * row..(y * w + x + 1) * row];
            for ky in 0..KSIZE {
                let sy = y as isize + ky as isize - 1;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kx in 0..KSIZE {
                    let sx = x as isize + kx as isize - 1;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let dst = (sy as usize * w + sx as usize) * c;
                    let off = (ky * KSIZE + kx) * c;
                    for ch in 0..c {
                        out[dst + ch] = out[dst + ch] + src[off + ch];
                    }
                }
            }
        }
    }
    out
}

/// Im2col buffer kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Conv2dCache<T> {
    cols: Vec<T>,
    h: usize,
    w: usize,
    c_in: usize,
}

/// Cross-correlation with zero padding of 1. `input` is `[H, W, C_in]`.
pub fn conv2d_forward<T: Real>(
    input: &[T],
    h: usize,
    w: usize,
    kernel: &Tensor<T>,
    bias: &[T],
) -> Result<(Vec<T>, Conv2dCache<T>)> {
    let (c_in, c_out) = kernel_dims(kernel.shape())?;
    ensure!(
        input.len() == h * w * c_in,
        "conv2d input has {} values, expected [{h}, {w}, {c_in}]",
        input.len()
    );
    ensure!(bias.len() == c_out, "conv2d bias has {} values for {c_out} channels", bias.len());
    let cols = im2col(input, h, w, c_in);
    let mut out = Vec::with_capacity(h * w * c_out);
    for _ in 0..h * w {
        out.extend_from_slice(bias);
    }
    gemm(
        Transpose::No,
        Transpose::No,
        h * w,
        c_out,
        KSIZE * KSIZE * c_in,
        T::one(),
        &cols,
        kernel.data(),
        T::one(),
        &mut out,
    );
    Ok((out, Conv2dCache { cols, h, w, c_in }))
}

pub struct Conv2dGrads<T> {
    /// `None` when the caller asked to skip the input gradient.
    pub input: Option<Vec<T>>,
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Real>(
    cache: &Conv2dCache<T>,
    kernel: &Tensor<T>,
    upstream: &[T],
    need_input: bool,
) -> Result<Conv2dGrads<T>> {
    let (c_in, c_out) = kernel_dims(kernel.shape())?;
    ensure!(c_in == cache.c_in, "conv2d cache channel mismatch");
    let (hw, row) = (cache.h * cache.w, KSIZE * KSIZE * c_in);
    ensure!(upstream.len() == hw * c_out, "conv2d upstream gradient has wrong length");
    let mut dk = vec![T::zero(); row * c_out];
    gemm(Transpose::Yes, Transpose::No, row, c_out, hw, T::one(), &cache.cols, upstream, T::zero(), &mut dk);
    let mut db = vec![T::zero(); c_out];
    for px in upstream.chunks_exact(c_out) {
        for (b, &g) in db.iter_mut().zip(px) {
            *b = *b + g;
        }
    }
    let input = if need_input {
        let mut dcols = vec![T::zero(); hw * row];
        gemm(Transpose::No, Transpose::Yes, hw, row, c_out, T::one(), upstream, kernel.data(), T::zero(), &mut dcols);
        Some(col2im(&dcols, cache.h, cache.w, c_in))
    } else {
        None
    };
    Ok(Conv2dGrads {
        input,
        kernel: Tensor::from_vec(kernel.shape(), dk)?,
        bias: Tensor::from_vec(&[c_out], db)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(input: &[f64], h: usize, w: usize, k: &Tensor<f64>, b: &[f64]) -> Vec<f64> {
        let (ci, co) = (k.shape()[2], k.shape()[3]);
        let mut out = vec![0.0; h * w * co];
        for y in 0..h as isize {
            for x in 0..w as isize {
                for o in 0..co {
                    let mut s = b[o];
                    for ky in 0..3isize {
                        for kx in 0..3isize {
                            let (sy, sx) = (y + ky - 1, x + kx - 1);
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                continue;
                            }
                            for c in 0..ci {
                                let iv = input[((sy as usize) * w + sx as usize) * ci + c];
                                s += iv * k.data()[(((ky * 3 + kx) as usize) * ci + c) * co + o];
                            }
                        }
                    }
                    out[((y as usize) * w + x as usize) * co + o] = s;
                }
            }
        }
        out
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut k = Tensor::zeros(&[3, 3, 2, 2]);
        // Center tap, channel c -> c.
        k.data_mut()[(4 * 2) * 2] = 1.0;
        k.data_mut()[(4 * 2 + 1) * 2 + 1] = 1.0;
        let x: Vec<f64> = (0..4 * 5 * 2).map(|v| v as f64 * 0.1).collect();
        let (y, _) = conv2d_forward(&x, 4, 5, &k, &[0.0, 0.0]).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn ones_kernel_on_constant_field() {
        let k = Tensor::full(&[3, 3, 1, 1], 1.0);
        let (y, _) = conv2d_forward(&[2.0f64; 25], 5, 5, &k, &[0.5]).unwrap();
        assert_eq!(y[2 * 5 + 2], 9.0 * 2.0 + 0.5);
        // Corner sees four taps.
        assert_eq!(y[0], 4.0 * 2.0 + 0.5);
    }

    #[test]
    fn matches_naive_reference() {
        let (h, w, ci, co) = (4, 3, 3, 2);
        let k = Tensor::from_vec(&[3, 3, ci, co], (0..9 * ci * co).map(|v| (v as f64 * 0.37).sin()).collect()).unwrap();
        let x: Vec<f64> = (0..h * w * ci).map(|v| (v as f64 * 0.11).cos()).collect();
        let b = [0.3, -0.2];
        let (y, _) = conv2d_forward(&x, h, w, &k, &b).unwrap();
        for (a, e) in y.iter().zip(naive(&x, h, w, &k, &b)) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn channel_mismatch_rejected() {
        let k = Tensor::<f64>::zeros(&[3, 3, 2, 1]);
        assert!(conv2d_forward(&[0.0; 12], 2, 2, &k, &[0.0]).is_err());
        assert!(conv2d_forward(&[0.0; 8], 2, 2, &Tensor::zeros(&[2, 2, 2, 1]), &[0.0]).is_err());
    }
}
