use serde::{Deserialize, Serialize};

use super::density::{density_backward, density_estimate};
use super::mcconv::{mc_conv_backward, mc_conv_forward, KernelRef, McConvCache};
use super::neighbors::{radius_neighbors, NeighborGraph};
use crate::error::{ensure, Result};
use crate::geometry::RayPointCloud;
use crate::tensor::{Real, Tensor};

/// One ray-aligned depth update layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RaduLayerConfig {
    /// Neighborhood radius, meters.
    pub radius: f64,
    pub c_in: usize,
    pub c_out: usize,
    /// Maximum displacement per layer, meters.
    pub alpha: f64,
    /// Density bandwidth, meters.
    pub sigma: f64,
}

impl RaduLayerConfig {
    /// `alpha = 0.1` and `sigma = radius / 4`.
    pub fn new(radius: f64, c_in: usize, c_out: usize) -> Self {
        Self {
            radius,
            c_in,
            c_out,
            alpha: 0.1,
            sigma: radius / 4.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.alpha > 0.0, "RADU alpha must be positive, got {}", self.alpha);
        ensure!(self.radius > 0.0, "RADU radius must be positive, got {}", self.radius);
        ensure!(self.sigma > 0.0, "density bandwidth must be positive, got {}", self.sigma);
        Ok(())
    }
}

/// Moves each point along its ray by `alpha * tanh(u)`.
pub fn radu_update<T: Real>(cloud: &RayPointCloud<T>, u: &[T], alpha: f64) -> Result<RayPointCloud<T>> {
    ensure!(alpha > 0.0, "RADU alpha must be positive, got {alpha}");
    ensure!(u.len() == cloud.len(), "update length {} for {} points", u.len(), cloud.len());
    let a = T::of(alpha);
    let distance = cloud.distance.iter().zip(u).map(|(&d, &v)| d + a * v.tanh()).collect();
    cloud.with_distance(distance)
}

/// Returns `(d_u, d_distance_in)` given the gradient on the output
/// distances.
pub fn radu_update_backward<T: Real>(u: &[T], alpha: f64, d_distance: &[T]) -> (Vec<T>, Vec<T>) {
    let a = T::of(alpha);
    let du = u
        .iter()
        .zip(d_distance)
        .map(|(&v, &g)| {
            let t = v.tanh();
            g * a * (T::one() - t * t)
        })
        .collect();
    (du, d_distance.to_vec())
}

#[derive(Debug, Clone)]
pub struct RaduLayerCache<T> {
    pub positions: Vec<[T; 3]>,
    pub graph: NeighborGraph,
    pub pde: Vec<T>,
    pub update: Vec<T>,
    conv: McConvCache<T>,
}

#[derive(Debug, Clone)]
pub struct RaduLayerGrads<T> {
    pub features: Tensor<T>,
    pub distance: Vec<T>,
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
}

/// Convolution plus ray-aligned update. The output cloud carries the raw
/// (pre-activation) convolution features and the shifted distances.
pub fn radu_layer_forward<T: Real>(
    cloud: &RayPointCloud<T>,
    kernel: &KernelRef<T>,
    config: &RaduLayerConfig,
) -> Result<(RayPointCloud<T>, RaduLayerCache<T>)> {
    config.validate()?;
    ensure!(
        kernel.c_in == config.c_in && kernel.c_out == config.c_out,
        "kernel {} -> {} does not match layer {} -> {}",
        kernel.c_in,
        kernel.c_out,
        config.c_in,
        config.c_out
    );
    let positions = cloud.positions();
    let graph = radius_neighbors(&positions, config.radius)?;
    let pde = density_estimate(&positions, &graph, T::of(config.sigma));
    let out = mc_conv_forward(&cloud.features, &positions, &graph, &pde, kernel, config.radius)?;
    let moved = radu_update(cloud, &out.update, config.alpha)?;
    let next = moved.with_features(out.features)?;
    Ok((
        next,
        RaduLayerCache {
            positions,
            graph,
            pde,
            update: out.update,
            conv: out.cache,
        },
    ))
}

pub fn radu_layer_backward<T: Real>(
    cloud: &RayPointCloud<T>,
    kernel: &KernelRef<T>,
    config: &RaduLayerConfig,
    cache: &RaduLayerCache<T>,
    d_features: &Tensor<T>,
    d_distance: &[T],
) -> Result<RaduLayerGrads<T>> {
    let (du, mut dd) = radu_update_backward(&cache.update, config.alpha, d_distance);
    let g = mc_conv_backward(
        &cloud.features,
        &cache.positions,
        &cache.graph,
        &cache.pde,
        kernel,
        config.radius,
        &cache.conv,
        d_features,
        &du,
    )?;
    let dpos_density = density_backward(&cache.positions, &cache.graph, T::of(config.sigma), &g.pde);
    for (i, d) in dd.iter_mut().enumerate() {
        let r = cloud.rays[i];
        for a in 0..3 {
            *d = *d + r[a] * (g.positions[i][a] + dpos_density[i][a]);
        }
    }
    Ok(RaduLayerGrads {
        features: g.features,
        distance: dd,
        w1: g.w1,
        b1: g.b1,
        w2: g.w2,
        b2: g.b2,
    })
}
