use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::geometry::{CameraIntrinsics, RayPointCloud};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    #[default]
    Average,
    Max,
}

/// Which fine pixels fed each coarse point.
#[derive(Debug, Clone)]
pub struct PoolCache {
    mode: PoolMode,
    fine_pixels: usize,
    channels: usize,
    /// Valid fine pixels per coarse point (average mode).
    members: Vec<Vec<usize>>,
    /// Winning fine pixel per point for the distance, then per channel
    /// (max mode).
    argmax_distance: Vec<usize>,
    argmax_features: Vec<usize>,
}

/// 2.5D pooling over `k x k` blocks: distances and features are pooled over
/// the valid pixels of each block, and the pooled distance is placed on the
/// coarse pixel's center ray. Blocks without valid pixels yield no point.
pub fn pool_2_5d<T: Real>(
    dist: &Tensor<T>,
    mask: &[bool],
    features: &Tensor<T>,
    intrinsics: &CameraIntrinsics,
    k: usize,
    mode: PoolMode,
) -> Result<(RayPointCloud<T>, PoolCache)> {
    let (h, w) = (intrinsics.height, intrinsics.width);
    dist.expect_shape("pool_2_5d", &[h, w])?;
    ensure!(mask.len() == h * w, "mask has {} entries for {}x{} grid", mask.len(), w, h);
    ensure!(
        features.shape().len() == 3 && features.shape()[..2] == [h, w],
        "pool features must be [{h}, {w}, C], got {:?}",
        features.shape()
    );
    let c = features.shape()[2];
    let coarse = intrinsics.scale(k)?;
    let rays = coarse.rays();
    let (d, f) = (dist.data(), features.data());

    let mut cloud_rays = Vec::new();
    let mut distance = Vec::new();
    let mut feats = Vec::new();
    let mut pixel_index = Vec::new();
    let mut members = Vec::new();
    let mut argmax_distance = Vec::new();
    let mut argmax_features = Vec::new();
    for cy in 0..coarse.height {
        for cx in 0..coarse.width {
            let block: Vec<usize> = (0..k)
                .flat_map(|dy| (0..k).map(move |dx| (cy * k + dy) * w + cx * k + dx))
                .filter(|&p| mask[p])
                .collect();
            if block.is_empty() {
                continue;
            }
            match mode {
                PoolMode::Average => {
                    let inv = T::one() / T::of(block.len() as f64);
                    distance.push(block.iter().fold(T::zero(), |a, &p| a + d[p]) * inv);
                    for ch in 0..c {
                        feats.push(block.iter().fold(T::zero(), |a, &p| a + f[p * c + ch]) * inv);
                    }
                }
                PoolMode::Max => {
                    // First maximum in scan order wins, so ties route to the
                    // lowest pixel index.
                    let best = |val: &dyn Fn(usize) -> T| {
                        block.iter().copied().fold(block[0], |b, p| if val(p) > val(b) { p } else { b })
                    };
                    let pd = best(&|p| d[p]);
                    argmax_distance.push(pd);
                    distance.push(d[pd]);
                    for ch in 0..c {
                        let pf = best(&|p| f[p * c + ch]);
                        argmax_features.push(pf);
                        feats.push(f[pf * c + ch]);
                    }
                }
            }
            let coarse_pix = cy * coarse.width + cx;
            let r = rays[coarse_pix];
            cloud_rays.push([T::of(r[0]), T::of(r[1]), T::of(r[2])]);
            pixel_index.push(coarse_pix);
            members.push(block);
        }
    }
    let n = distance.len();
    Ok((
        RayPointCloud {
            rays: cloud_rays,
            distance,
            features: Tensor::from_vec(&[n, c], feats)?,
            pixel_index,
            intrinsics: coarse,
        },
        PoolCache {
            mode,
            fine_pixels: h * w,
            channels: c,
            members,
            argmax_distance,
            argmax_features,
        },
    ))
}

/// Scatters coarse gradients back to the fine grid. Returns
/// `(d_dist [H * W], d_features [H * W * C])`.
pub fn pool_2_5d_backward<T: Real>(cache: &PoolCache, d_distance: &[T], d_features: &Tensor<T>) -> Result<(Vec<T>, Vec<T>)> {
    let (n, c) = (cache.members.len(), cache.channels);
    ensure!(d_distance.len() == n, "pool distance gradient length mismatch");
    d_features.expect_shape("pool_2_5d_backward", &[n, c])?;
    let mut dd = vec![T::zero(); cache.fine_pixels];
    let mut df = vec![T::zero(); cache.fine_pixels * c];
    let g = d_features.data();
    for (j, block) in cache.members.iter().enumerate() {
        match cache.mode {
            PoolMode::Average => {
                let inv = T::one() / T::of(block.len() as f64);
                for &p in block {
                    dd[p] = dd[p] + d_distance[j] * inv;
                    for ch in 0..c {
                        df[p * c + ch] = df[p * c + ch] + g[j * c + ch] * inv;
                    }
                }
            }
            PoolMode::Max => {
                let p = cache.argmax_distance[j];
                dd[p] = dd[p] + d_distance[j];
                for ch in 0..c {
                    let p = cache.argmax_features[j * c + ch];
                    df[p * c + ch] = df[p * c + ch] + g[j * c + ch];
                }
            }
        }
    }
    Ok((dd, df))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_field_pools_to_constant() {
        let k = CameraIntrinsics::default_for(64, 64);
        let d = Tensor::full(&[64, 64], 3.0f64);
        let f = Tensor::full(&[64, 64, 2], 0.5);
        let (cloud, _) = pool_2_5d(&d, &vec![true; 4096], &f, &k, 8, PoolMode::Average).unwrap();
        assert_eq!(cloud.len(), 64);
        assert!(cloud.distance.iter().all(|&v| (v - 3.0).abs() < 1e-12));
        assert!(cloud.features.data().iter().all(|&v| (v - 0.5).abs() < 1e-12));
        let coarse = k.scale(8).unwrap();
        for (i, &pix) in cloud.pixel_index.iter().enumerate() {
            let r = coarse.pixel_ray(pix % 8, pix / 8).unwrap();
            assert_eq!(cloud.rays[i], r);
        }
    }

    #[test]
    fn block_mean_and_max() {
        let k = CameraIntrinsics::default_for(2, 2);
        let d = Tensor::from_vec(&[2, 2], vec![2.0, 4.0, 2.0, 4.0]).unwrap();
        let f = Tensor::from_vec(&[2, 2, 1], vec![1.0, 5.0, 5.0, 0.0]).unwrap();
        let (avg, _) = pool_2_5d(&d, &[true; 4], &f, &k, 2, PoolMode::Average).unwrap();
        assert_eq!(avg.distance, vec![3.0]);
        assert_eq!(avg.features.data(), &[2.75]);
        let (max, cache) = pool_2_5d(&d, &[true; 4], &f, &k, 2, PoolMode::Max).unwrap();
        assert_eq!(max.distance, vec![4.0]);
        assert_eq!(max.features.data(), &[5.0]);
        let (dd, df) = pool_2_5d_backward(&cache, &[1.0], &Tensor::full(&[1, 1], 1.0)).unwrap();
        assert_eq!(dd, vec![0.0, 1.0, 0.0, 0.0]);
        // Tie between pixels 1 and 2: the lower index takes the gradient.
        assert_eq!(df, vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn invalid_pixels_are_excluded_and_empty_blocks_dropped() {
        let k = CameraIntrinsics::default_for(4, 2);
        let d = Tensor::from_vec(&[2, 4], vec![1.0, 9.0, 5.0, 5.0, 3.0, 9.0, 5.0, 5.0]).unwrap();
        let mask = [true, false, false, false, true, false, false, false];
        let f = Tensor::zeros(&[2, 4, 0]);
        let (cloud, _) = pool_2_5d(&d, &mask, &f, &k, 2, PoolMode::Average).unwrap();
        assert_eq!(cloud.distance, vec![2.0]);
        assert_eq!(cloud.pixel_index, vec![0]);
    }
}
