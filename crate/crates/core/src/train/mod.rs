//! Supervised training, cyclic self-training and checkpoints.

mod adam;
mod checkpoint;
mod fit;

use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::net::{coarse_fine_loss, forward, AugmentConfig, ModelParams, Sample};
use crate::tensor::Tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MANIFEST};
pub use fit::{adapt, fit, AdaptOutcome, EpochEvent, FitOutcome, LabelUse, Observer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    /// Multiplier applied to the learning rate every `decay_epochs`,
    /// interpolated continuously in between.
    pub decay_factor: f64,
    pub decay_epochs: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub l1_only: bool,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            decay_factor: 0.1,
            decay_epochs: 100.0,
            batch_size: 4,
            epochs: 300,
            adam: AdamConfig::default(),
            seed: 0,
            l1_only: false,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.lr >= 0.0 && self.lr.is_finite(), "learning rate must be non-negative, got {}", self.lr);
        ensure!(self.batch_size >= 1, "batch size must be at least 1");
        ensure!(
            self.decay_factor > 0.0 && self.decay_epochs > 0.0,
            "learning-rate decay must be positive"
        );
        self.adam.validate()
    }

    /// `lr * decay_factor^(epoch / decay_epochs)`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.decay_factor.powf(epoch as f64 / self.decay_epochs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptConfig {
    /// Probability that a training step uses a pseudo-labeled target sample.
    pub p: f64,
    /// Epochs between pseudo-label refreshes.
    pub n_cycle: usize,
    pub lr: f64,
    /// Learning-rate schedule as in [`TrainConfig`].
    pub decay_factor: f64,
    pub decay_epochs: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub l1_only: bool,
    pub augment: AugmentConfig,
    /// Draw the domain once per batch rather than once per sample.
    pub whole_batch: bool,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            p: 0.5,
            n_cycle: 20,
            lr: 5e-5,
            decay_factor: 0.1,
            decay_epochs: 100.0,
            epochs: 100,
            batch_size: 4,
            adam: AdamConfig::default(),
            seed: 0,
            l1_only: false,
            augment: AugmentConfig::default(),
            whole_batch: false,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!((0.0..=1.0).contains(&self.p), "mixing probability must lie in [0, 1], got {}", self.p);
        ensure!(self.n_cycle >= 1, "n_cycle must be at least 1");
        ensure!(self.lr >= 0.0 && self.lr.is_finite(), "learning rate must be non-negative, got {}", self.lr);
        ensure!(self.batch_size >= 1, "batch size must be at least 1");
        ensure!(
            self.decay_factor > 0.0 && self.decay_epochs > 0.0,
            "learning-rate decay must be positive"
        );
        self.adam.validate()
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.decay_factor.powf(epoch as f64 / self.decay_epochs)
    }
}

/// Labeled examples drawn by index. Implementations may synthesize a fresh
/// noise realization on every draw.
pub trait TrainingSet {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn draw(&self, index: usize, rng: &mut ChaCha8Rng) -> Result<Sample>;
}

impl TrainingSet for [Sample] {
    fn len(&self) -> usize {
        <[Sample]>::len(self)
    }

    fn draw(&self, index: usize, _: &mut ChaCha8Rng) -> Result<Sample> {
        self.get(index)
            .cloned()
            .ok_or_else(|| Error::Contract(format!("sample index {index} out of range")))
    }
}

impl TrainingSet for Vec<Sample> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn draw(&self, index: usize, rng: &mut ChaCha8Rng) -> Result<Sample> {
        self.as_slice().draw(index, rng)
    }
}

/// An evaluation example with the conventional ToF distance it is compared
/// against.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSample {
    pub sample: Sample,
    /// `[H, W]` meters.
    pub baseline: Tensor<f32>,
}

/// Pixel-weighted metrics over a set of samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    /// Mean per-sample training loss.
    pub loss: f64,
    pub mae: f64,
    pub baseline_mae: f64,
    /// `mae / baseline_mae`; undefined when the baseline is exact.
    pub relative_error: Option<f64>,
    pub pixels: usize,
}

/// Network output distance for one sample.
pub fn predict(params: &ModelParams<f32>, sample: &Sample) -> Result<Tensor<f32>> {
    Ok(forward(params, &sample.net_input())?.d_out)
}

/// Accumulates absolute errors of predictions against labels.
#[derive(Debug, Clone, Copy, Default)]
pub struct ErrorSums {
    pub pred: f64,
    pub baseline: f64,
    pub pixels: usize,
}

impl ErrorSums {
    pub fn add(&mut self, pred: &[f32], baseline: &[f32], gt: &[f32], mask: &[bool]) {
        for i in 0..mask.len() {
            if mask[i] {
                self.pred += (pred[i] as f64 - gt[i] as f64).abs();
                self.baseline += (baseline[i] as f64 - gt[i] as f64).abs();
                self.pixels += 1;
            }
        }
    }

    pub fn mae(&self) -> f64 {
        self.pred / self.pixels.max(1) as f64
    }

    pub fn baseline_mae(&self) -> f64 {
        self.baseline / self.pixels.max(1) as f64
    }

    pub fn relative_error(&self) -> Option<f64> {
        (self.baseline > 0.0).then(|| self.pred / self.baseline)
    }
}

pub fn evaluate(params: &ModelParams<f32>, items: &[EvalSample], l1_only: bool) -> Result<EvalMetrics> {
    ensure!(!items.is_empty(), "evaluation set is empty");
    let mut sums = ErrorSums::default();
    let mut loss = 0.0;
    let mut counted = 0usize;
    for item in items {
        let s = &item.sample;
        if !s.mask.iter().any(|&m| m) {
            continue;
        }
        let out = forward(params, &s.net_input())?;
        loss += coarse_fine_loss(&out.d_out, &out.d_3d, &s.gt, &s.mask, l1_only)?.value;
        counted += 1;
        sums.add(out.d_out.data(), item.baseline.data(), s.gt.data(), &s.mask);
    }
    ensure!(counted > 0, "no evaluation sample has a valid pixel");
    Ok(EvalMetrics {
        loss: loss / counted as f64,
        mae: sums.mae(),
        baseline_mae: sums.baseline_mae(),
        relative_error: sums.relative_error(),
        pixels: sums.pixels,
    })
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub mae_m: f64,
    pub relative_error: Option<f64>,
    pub lr: f64,
    pub seconds: f64,
}

pub const METRICS_HEADER: &str = "epoch,split,loss,mae_m,relative_error,lr,seconds";

impl MetricRow {
    pub fn to_csv(&self) -> String {
        let rel = self.relative_error.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{:.3}",
            self.epoch, self.split, self.loss, self.mae_m, rel, self.lr, self.seconds
        )
    }
}

/// Appends rows to a CSV log, writing the header when the file is new.
pub fn append_metrics(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let fresh = !path.exists();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    if fresh {
        text.push_str(METRICS_HEADER);
        text.push('\n');
    }
    for r in rows {
        text.push_str(&r.to_csv());
        text.push('\n');
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
