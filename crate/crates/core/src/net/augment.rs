use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Sample;
use crate::error::{ensure, Result};
use crate::geometry::CameraIntrinsics;
use crate::tensor::Tensor;

/// Geometric transforms are each applied on a fair coin flip; the relative
/// input noise is applied on every draw when its std is positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub mirror: bool,
    /// Rotation by a uniformly drawn multiple of 90 degrees.
    pub quarter_rotation: bool,
    /// Bound of the small rotation in degrees; 0 disables it.
    pub small_rotation_deg: f64,
    /// Relative std of the multiplicative Gaussian noise on input channels.
    pub noise_rel_std: f64,
    /// `(height, width)` of a random crop.
    pub crop: Option<(usize, usize)>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            mirror: true,
            quarter_rotation: true,
            small_rotation_deg: 5.0,
            noise_rel_std: 0.02,
            crop: None,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self {
            mirror: false,
            quarter_rotation: false,
            small_rotation_deg: 0.0,
            noise_rel_std: 0.0,
            crop: None,
        }
    }

    pub fn is_disabled(&self) -> bool {
        !self.mirror && !self.quarter_rotation && self.small_rotation_deg == 0.0 && self.noise_rel_std == 0.0 && self.crop.is_none()
    }
}

/// Resamples every per-pixel buffer of `s` onto a new grid; `src(u, v)`
/// names the source pixel of destination `(u, v)`.
fn remap(s: &Sample, intrinsics: CameraIntrinsics, src: impl Fn(usize, usize) -> (usize, usize)) -> Sample {
    let (w0, c) = (s.width(), s.features.shape()[2]);
    let (h, w) = (intrinsics.height, intrinsics.width);
    let mut feat = Vec::with_capacity(h * w * c);
    let mut gt = Vec::with_capacity(h * w);
    let mut mask = Vec::with_capacity(h * w);
    for v in 0..h {
        for u in 0..w {
            let (su, sv) = src(u, v);
            let p = sv * w0 + su;
            feat.extend_from_slice(&s.features.data()[p * c..(p + 1) * c]);
            gt.push(s.gt.data()[p]);
            mask.push(s.mask[p]);
        }
    }
    Sample {
        features: Tensor::from_vec(&[h, w, c], feat).expect("sized above"),
        gt: Tensor::from_vec(&[h, w], gt).expect("sized above"),
        mask,
        intrinsics,
    }
}

pub fn mirror_horizontal(s: &Sample) -> Sample {
    let w = s.width();
    remap(s, s.intrinsics.mirrored_horizontal(), |u, v| (w - 1 - u, v))
}

/// Quarter turn clockwise: source `(u, v)` lands on `(H - 1 - v, u)`.
pub fn rotate_cw(s: &Sample) -> Sample {
    let h = s.height();
    remap(s, s.intrinsics.rotated_cw(), |u, v| (v, h - 1 - u))
}

/// Rotation about the principal point with nearest-neighbor sampling;
/// samples beyond the border take the nearest edge pixel.
fn rotate_small(s: &Sample, degrees: f64) -> Sample {
    let k = s.intrinsics;
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (wmax, hmax) = ((k.width - 1) as f64, (k.height - 1) as f64);
    remap(s, k, |u, v| {
        let x = u as f64 + 0.5 - k.cx;
        let y = v as f64 + 0.5 - k.cy;
        let sx = cos * x + sin * y + k.cx - 0.5;
        let sy = -sin * x + cos * y + k.cy - 0.5;
        (sx.round().clamp(0.0, wmax) as usize, sy.round().clamp(0.0, hmax) as usize)
    })
}

fn crop(s: &Sample, x0: usize, y0: usize, h: usize, w: usize) -> Result<Sample> {
    let k = s.intrinsics.cropped(x0, y0, w, h)?;
    Ok(remap(s, k, |u, v| (u + x0, v + y0)))
}

/// Draws one augmentation of `sample`. Labels and masks follow the
/// geometric transforms; only the input features receive noise.
pub fn augment<R: Rng + ?Sized>(sample: &Sample, rng: &mut R, config: &AugmentConfig) -> Result<Sample> {
    if let Some((ch, cw)) = config.crop {
        ensure!(
            ch <= sample.height() && cw <= sample.width() && ch > 0 && cw > 0,
            "crop {ch}x{cw} larger than {}x{} sample",
            sample.height(),
            sample.width()
        );
    }
    ensure!(config.noise_rel_std >= 0.0, "noise std must be non-negative");
    let mut s = sample.clone();
    if config.mirror && rng.random_bool(0.5) {
        s = mirror_horizontal(&s);
    }
    if config.quarter_rotation {
        for _ in 0..rng.random_range(0..4) {
            s = rotate_cw(&s);
        }
    }
    if config.small_rotation_deg > 0.0 && rng.random_bool(0.5) {
        let b = config.small_rotation_deg;
        s = rotate_small(&s, rng.random_range(-b..=b));
    }
    if let Some((ch, cw)) = config.crop {
        // Crop dimensions are given for the unrotated orientation.
        let (ch, cw) = if s.height() == sample.height() { (ch, cw) } else { (cw, ch) };
        ensure!(ch <= s.height() && cw <= s.width(), "crop does not fit the rotated sample");
        let y0 = rng.random_range(0..=s.height() - ch);
        let x0 = rng.random_range(0..=s.width() - cw);
        s = crop(&s, x0, y0, ch, cw)?;
    }
    if config.noise_rel_std > 0.0 {
        let sd = config.noise_rel_std;
        for v in s.features.data_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v *= (1.0 + sd * z) as f32;
        }
    }
    Ok(s)
}
