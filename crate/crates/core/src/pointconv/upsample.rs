use crate::error::{ensure, Result};
use crate::tensor::Real;

/// Source taps of fine coordinate `x` on a coarse axis of length `n`:
/// `(lo, hi, t)` with value `(1 - t) * c[lo] + t * c[hi]`.
fn taps(x: usize, k: usize, n: usize) -> (usize, usize, f64) {
    let s = (x as f64 + 0.5) / k as f64 - 0.5;
    if s <= 0.0 {
        return (0, 0, 0.0);
    }
    let lo = s.floor() as usize;
    if lo >= n - 1 {
        return (n - 1, n - 1, 0.0);
    }
    (lo, lo + 1, s - lo as f64)
}

/// Center-aligned bilinear upsampling of an `[h, w, C]` buffer by an
/// integer factor, clamping to the edge values beyond the outermost coarse
/// centers.
pub fn upsample_bilinear<T: Real>(coarse: &[T], h: usize, w: usize, c: usize, k: usize) -> Result<Vec<T>> {
    ensure!(k >= 1, "upsampling factor must be at least 1");
    ensure!(coarse.len() == h * w * c, "upsample input has {} values for [{h}, {w}, {c}]", coarse.len());
    let (fh, fw) = (h * k, w * k);
    let mut out = vec![T::zero(); fh * fw * c];
    if h == 0 || w == 0 {
        return Ok(out);
    }
    let xs: Vec<_> = (0..fw).map(|x| taps(x, k, w)).collect();
    for y in 0..fh {
        let (y0, y1, ty) = taps(y, k, h);
        let ty = T::of(ty);
        for (x, &(x0, x1, tx)) in xs.iter().enumerate() {
            let tx = T::of(tx);
            let w00 = (T::one() - ty) * (T::one() - tx);
            let w01 = (T::one() - ty) * tx;
            let w10 = ty * (T::one() - tx);
            let w11 = ty * tx;
            let o = &mut out[(y * fw + x) * c..(y * fw + x + 1) * c];
            let (a, b) = ((y0 * w + x0) * c, (y0 * w + x1) * c);
            let (d, e) = ((y1 * w + x0) * c, (y1 * w + x1) * c);
            for ch in 0..c {
                o[ch] = w00 * coarse[a + ch] + w01 * coarse[b + ch] + w10 * coarse[d + ch] + w11 * coarse[e + ch];
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`upsample_bilinear`].
pub fn upsample_bilinear_backward<T: Real>(upstream: &[T], h: usize, w: usize, c: usize, k: usize) -> Result<Vec<T>> {
    ensure!(k >= 1, "upsampling factor must be at least 1");
    let (fh, fw) = (h * k, w * k);
    ensure!(upstream.len() == fh * fw * c, "upsample gradient has wrong length");
    let mut grad = vec![T::zero(); h * w * c];
    if h == 0 || w == 0 {
        return Ok(grad);
    }
    let xs: Vec<_> = (0..fw).map(|x| taps(x, k, w)).collect();
    for y in 0..fh {
        let (y0, y1, ty) = taps(y, k, h);
        let ty = T::of(ty);
        for (x, &(x0, x1, tx)) in xs.iter().enumerate() {
            let tx = T::of(tx);
            let g = &upstream[(y * fw + x) * c..(y * fw + x + 1) * c];
            let targets = [
                ((y0 * w + x0) * c, (T::one() - ty) * (T::one() - tx)),
                ((y0 * w + x1) * c, (T::one() - ty) * tx),
                ((y1 * w + x0) * c, ty * (T::one() - tx)),
                ((y1 * w + x1) * c, ty * tx),
            ];
            for (base, wt) in targets {
                if wt == T::zero() {
                    continue;
                }
                for ch in 0..c {
                    grad[base + ch] = grad[base + ch] + wt * g[ch];
                }
            }
        }
    }
    Ok(grad)
}
