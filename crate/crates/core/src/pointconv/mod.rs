//! Point convolutions on ray-anchored clouds: radius neighborhoods, kernel
//! density, the Monte-Carlo convolution with its ray-aligned update channel,
//! 2.5D pooling and bilinear upsampling.

mod density;
mod mcconv;
mod neighbors;
mod pool;
mod radu;
mod upsample;

pub use density::{density_backward, density_estimate, DENSITY_FLOOR};
pub use mcconv::{
    glorot_uniform, mc_conv_backward, mc_conv_forward, KernelMlp, KernelRef, McConvCache, McConvGrads, McConvOutput,
    HIDDEN, LEAKY_SLOPE,
};
pub use neighbors::{brute_force_neighbors, radius_neighbors, NeighborGraph};
pub use pool::{pool_2_5d, pool_2_5d_backward, PoolCache, PoolMode};
pub use radu::{
    radu_layer_backward, radu_layer_forward, radu_update, radu_update_backward, RaduLayerCache, RaduLayerConfig,
    RaduLayerGrads,
};
pub use upsample::{upsample_bilinear, upsample_bilinear_backward};
