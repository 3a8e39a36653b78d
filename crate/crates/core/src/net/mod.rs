//! The coarse-fine RADU network, its loss, metrics and data augmentation.

mod augment;
mod conv2d;
mod loss;
mod metrics;
mod model;

pub use augment::{augment, mirror_horizontal, rotate_cw, AugmentConfig};
pub use conv2d::{conv2d_backward, conv2d_forward, Conv2d, Conv2dCache, Conv2dGrads};
pub use loss::{coarse_fine_loss, LossOutput};
pub use metrics::{mae, relative_error};
pub use model::{backward, forward, ForwardCache, ForwardOutput, ModelConfig, ModelParams, NetInput};

use crate::error::{ensure, Result};
use crate::geometry::CameraIntrinsics;
use crate::signal::{FeatureStack, FEATURE_CHANNELS};
use crate::tensor::{Real, Tensor};

/// A training or evaluation example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `[H, W, 5]`; channel 0 is the initial distance.
    pub features: Tensor<f32>,
    /// `[H, W]` meters. For unlabeled data this holds a pseudo-label.
    pub gt: Tensor<f32>,
    /// False where the input or the label is invalid.
    pub mask: Vec<bool>,
    pub intrinsics: CameraIntrinsics,
}

impl Sample {
    /// Builds a sample from a channel-first feature stack and a label.
    /// `gt_valid` is combined with the stack's own validity.
    pub fn from_stack(stack: &FeatureStack, gt: &[f64], gt_valid: &[bool], intrinsics: CameraIntrinsics) -> Result<Self> {
        let (h, w) = (intrinsics.height, intrinsics.width);
        let plane = h * w;
        stack.channels.expect_shape("sample features", &[FEATURE_CHANNELS, h, w])?;
        ensure!(gt.len() == plane && gt_valid.len() == plane, "label size mismatch");
        let ch = stack.channels.data();
        let mut features = Vec::with_capacity(plane * FEATURE_CHANNELS);
        for p in 0..plane {
            for c in 0..FEATURE_CHANNELS {
                features.push(ch[c * plane + p] as f32);
            }
        }
        let mask = stack.valid.iter().zip(gt_valid).map(|(&a, &b)| a && b).collect();
        Ok(Self {
            features: Tensor::from_vec(&[h, w, FEATURE_CHANNELS], features)?,
            gt: Tensor::from_vec(&[h, w], gt.iter().map(|&v| v as f32).collect())?,
            mask,
            intrinsics,
        })
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    /// Channel 0 of the features on masked pixels, 0 elsewhere.
    pub fn init_distance(&self) -> Vec<f32> {
        let c = self.features.shape()[2];
        self.features
            .data()
            .chunks_exact(c)
            .zip(&self.mask)
            .map(|(px, &m)| if m { px[0] } else { 0.0 })
            .collect()
    }

    pub fn net_input<T: Real>(&self) -> NetInput<T> {
        let (h, w) = (self.height(), self.width());
        NetInput {
            features: self.features.cast(),
            init_distance: Tensor::from_vec(&[h, w], self.init_distance())
                .expect("one distance per pixel")
                .cast(),
            mask: self.mask.clone(),
            intrinsics: self.intrinsics,
        }
    }

    /// Same input with a different label.
    pub fn with_label(&self, gt: Tensor<f32>, mask: Vec<bool>) -> Self {
        Self {
            gt,
            mask,
            ..self.clone()
        }
    }
}
