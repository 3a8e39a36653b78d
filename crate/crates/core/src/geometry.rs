//! Pinhole camera rays and the projections between distance maps and
//! ray-anchored point clouds.
//!
//! A point is stored as a distance along its pixel's unit ray; its position
//! is always derived as `distance * ray`, so points can never leave their
//! rays.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::tensor::{Real, Tensor};

/// Pinhole intrinsics in pixels. Pixel `(u, v)` has its center at
/// `(u + 0.5, v + 0.5)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Centered principal point with a horizontal field of view of about
    /// 49 degrees.
    pub fn default_for(width: usize, height: usize) -> Self {
        let f = 1.1 * width as f64;
        Self {
            fx: f,
            fy: f,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.fx > 0.0 && self.fy > 0.0,
            "focal lengths must be positive, got ({}, {})",
            self.fx,
            self.fy
        );
        ensure!(
            self.width >= 1 && self.height >= 1,
            "image must be at least 1x1, got {}x{}",
            self.width,
            self.height
        );
        Ok(())
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    /// Unit ray through the center of pixel `(u, v)`.
    pub fn pixel_ray(&self, u: usize, v: usize) -> Result<[f64; 3]> {
        ensure!(
            u < self.width && v < self.height,
            "pixel ({u}, {v}) outside {}x{} image",
            self.width,
            self.height
        );
        Ok(self.ray_unchecked(u, v))
    }

    fn ray_unchecked(&self, u: usize, v: usize) -> [f64; 3] {
        let x = (u as f64 + 0.5 - self.cx) / self.fx;
        let y = (v as f64 + 0.5 - self.cy) / self.fy;
        let n = (x * x + y * y + 1.0).sqrt();
        [x / n, y / n, 1.0 / n]
    }

    /// Rays of every pixel, row-major.
    pub fn rays(&self) -> Vec<[f64; 3]> {
        let mut out = Vec::with_capacity(self.num_pixels());
        for v in 0..self.height {
            for u in 0..self.width {
                out.push(self.ray_unchecked(u, v));
            }
        }
        out
    }

    /// Intrinsics of the grid downsampled by `k`.
    pub fn scale(&self, k: usize) -> Result<Self> {
        ensure!(k >= 1, "scale factor must be at least 1");
        ensure!(
            self.width % k == 0 && self.height % k == 0,
            "{}x{} is not divisible by {k}; pad first",
            self.width,
            self.height
        );
        let s = k as f64;
        Ok(Self {
            fx: self.fx / s,
            fy: self.fy / s,
            cx: self.cx / s,
            cy: self.cy / s,
            width: self.width / k,
            height: self.height / k,
        })
    }

    /// Intrinsics after mirroring the image left-right.
    pub fn mirrored_horizontal(&self) -> Self {
        Self {
            cx: self.width as f64 - self.cx,
            ..*self
        }
    }

    pub fn mirrored_vertical(&self) -> Self {
        Self {
            cy: self.height as f64 - self.cy,
            ..*self
        }
    }

    /// Intrinsics after rotating the image by 90 degrees clockwise, where
    /// source pixel `(u, v)` moves to `(H - 1 - v, u)`.
    pub fn rotated_cw(&self) -> Self {
        Self {
            fx: self.fy,
            fy: self.fx,
            cx: self.height as f64 - self.cy,
            cy: self.cx,
            width: self.height,
            height: self.width,
        }
    }

    /// Intrinsics of the sub-window starting at `(x0, y0)`.
    pub fn cropped(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        ensure!(
            x0 + width <= self.width && y0 + height <= self.height && width > 0 && height > 0,
            "crop {width}x{height}+{x0}+{y0} outside {}x{} image",
            self.width,
            self.height
        );
        Ok(Self {
            cx: self.cx - x0 as f64,
            cy: self.cy - y0 as f64,
            width,
            height,
            ..*self
        })
    }

    /// Intrinsics after padding at the right and bottom; rays of existing
    /// pixels are unchanged.
    pub fn padded(&self, width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            ..*self
        }
    }
}

/// Points anchored on fixed per-pixel unit rays.
#[derive(Debug, Clone, PartialEq)]
pub struct RayPointCloud<T> {
    pub rays: Vec<[T; 3]>,
    pub distance: Vec<T>,
    /// `[N, C]`; `C` may be zero.
    pub features: Tensor<T>,
    /// Row-major pixel of each point in the `intrinsics` grid.
    pub pixel_index: Vec<usize>,
    pub intrinsics: CameraIntrinsics,
}

impl<T: Real> RayPointCloud<T> {
    pub fn len(&self) -> usize {
        self.distance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distance.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.features.shape().get(1).copied().unwrap_or(0)
    }

    pub fn position(&self, i: usize) -> [T; 3] {
        let (r, d) = (self.rays[i], self.distance[i]);
        [r[0] * d, r[1] * d, r[2] * d]
    }

    pub fn positions(&self) -> Vec<[T; 3]> {
        (0..self.len()).map(|i| self.position(i)).collect()
    }

    /// Copy with the same points and new features.
    pub fn with_features(&self, features: Tensor<T>) -> Result<Self> {
        ensure!(
            features.shape().len() == 2 && features.shape()[0] == self.len(),
            "features {:?} do not match {} points",
            features.shape(),
            self.len()
        );
        Ok(Self {
            features,
            ..self.clone()
        })
    }

    /// Copy with new distances.
    pub fn with_distance(&self, distance: Vec<T>) -> Result<Self> {
        ensure!(distance.len() == self.len(), "distance count mismatch");
        Ok(Self {
            distance,
            ..self.clone()
        })
    }
}

/// Inverse camera projection: one point per pixel with a positive distance.
pub fn backproject<T: Real>(dist_map: &Tensor<T>, intrinsics: &CameraIntrinsics) -> Result<RayPointCloud<T>> {
    intrinsics.validate()?;
    dist_map.expect_shape("backproject", &[intrinsics.height, intrinsics.width])?;
    let rays = intrinsics.rays();
    let mut cloud = RayPointCloud {
        rays: Vec::new(),
        distance: Vec::new(),
        features: Tensor::zeros(&[0, 0]),
        pixel_index: Vec::new(),
        intrinsics: *intrinsics,
    };
    for (pix, &d) in dist_map.data().iter().enumerate() {
        if d > T::zero() && d.is_finite() {
            let r = rays[pix];
            cloud.rays.push([T::of(r[0]), T::of(r[1]), T::of(r[2])]);
            cloud.distance.push(d);
            cloud.pixel_index.push(pix);
        }
    }
    cloud.features = Tensor::zeros(&[cloud.len(), 0]);
    Ok(cloud)
}

/// Camera projection: writes each point's distance into its pixel. Returns
/// the map and its validity mask.
pub fn project<T: Real>(cloud: &RayPointCloud<T>) -> Result<(Tensor<T>, Vec<bool>)> {
    let k = &cloud.intrinsics;
    let mut map = Tensor::zeros(&[k.height, k.width]);
    let mut mask = vec![false; k.num_pixels()];
    for (&pix, &d) in cloud.pixel_index.iter().zip(&cloud.distance) {
        ensure!(pix < mask.len(), "pixel index {pix} outside {}x{} grid", k.width, k.height);
        ensure!(!mask[pix], "duplicate pixel index {pix} in point cloud");
        mask[pix] = true;
        map.data_mut()[pix] = d;
    }
    Ok((map, mask))
}

/// Z-depth of every point written to its pixel; empty pixels are 0.
pub fn distance_to_zdepth<T: Real>(cloud: &RayPointCloud<T>) -> Result<Tensor<T>> {
    let (mut map, _) = project(cloud)?;
    for (i, &pix) in cloud.pixel_index.iter().enumerate() {
        map.data_mut()[pix] = cloud.distance[i] * cloud.rays[i][2];
    }
    Ok(map)
}

/// Inverse of [`distance_to_zdepth`] on a full map.
pub fn zdepth_to_distance<T: Real>(zdepth: &Tensor<T>, intrinsics: &CameraIntrinsics) -> Result<Tensor<T>> {
    zdepth.expect_shape("zdepth_to_distance", &[intrinsics.height, intrinsics.width])?;
    let rays = intrinsics.rays();
    Ok(Tensor::from_vec(
        zdepth.shape(),
        zdepth
            .data()
            .iter()
            .zip(&rays)
            .map(|(&z, r)| z / T::of(r[2]))
            .collect(),
    )?)
}

/// Size after padding `n` up to a multiple of `k`.
pub fn padded_extent(n: usize, k: usize) -> usize {
    n.div_ceil(k) * k
}

/// Reflect index `i` (possibly beyond `n - 1`) back into `[0, n)` without
/// repeating the edge sample.
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

/// Reflect-pads an `[H, W, C]` buffer at the right and bottom to
/// `[new_h, new_w, C]`.
pub fn pad_reflect<T: Copy>(data: &[T], h: usize, w: usize, c: usize, new_h: usize, new_w: usize) -> Vec<T> {
    assert!(new_h >= h && new_w >= w && data.len() == h * w * c);
    let mut out = Vec::with_capacity(new_h * new_w * c);
    for y in 0..new_h {
        let sy = reflect(y, h);
        for x in 0..new_w {
            let sx = reflect(x, w);
            out.extend_from_slice(&data[(sy * w + sx) * c..(sy * w + sx + 1) * c]);
        }
    }
    out
}

/// Top-left `[h, w, C]` window of an `[H, W, C]` buffer.
pub fn crop_top_left<T: Copy>(data: &[T], full_w: usize, c: usize, h: usize, w: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(h * w * c);
    for y in 0..h {
        out.extend_from_slice(&data[y * full_w * c..(y * full_w + w) * c]);
    }
    out
}
