use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamState};
use super::{evaluate, predict, AdaptConfig, EvalSample, MetricRow, TrainConfig, TrainingSet};
use crate::error::{ensure, Result};
use crate::net::{augment, backward, coarse_fine_loss, forward, AugmentConfig, ModelParams, Sample};
use crate::tensor::Tensor;

/// Reported to the observer after every epoch.
pub struct EpochEvent<'a> {
    pub epoch: usize,
    pub rows: &'a [MetricRow],
    pub params: &'a ModelParams<f32>,
    pub optimizer: &'a AdamState,
    /// The validation MAE improved on every earlier epoch.
    pub improved: bool,
}

pub type Observer<'o> = dyn FnMut(&EpochEvent) -> Result<()> + 'o;

#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// Parameters with the lowest validation MAE, or the final ones when no
    /// validation set is given.
    pub best: ModelParams<f32>,
    pub best_epoch: Option<usize>,
    pub last: ModelParams<f32>,
    pub optimizer: AdamState,
    pub metrics: Vec<MetricRow>,
}

/// One consumed pseudo-label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelUse {
    pub epoch: usize,
    pub target: usize,
    /// Epoch at which the label was produced.
    pub version: usize,
}

#[derive(Debug, Clone)]
pub struct AdaptOutcome {
    pub params: ModelParams<f32>,
    pub optimizer: AdamState,
    pub metrics: Vec<MetricRow>,
    pub refresh_epochs: Vec<usize>,
    pub label_uses: Vec<LabelUse>,
    pub source_draws: usize,
    pub target_draws: usize,
}

#[derive(Default)]
struct EpochStats {
    loss: f64,
    abs_err: f64,
    pixels: usize,
    samples: usize,
}

struct Step<'a> {
    augment: &'a AugmentConfig,
    l1_only: bool,
    lr: f64,
}

/// Forward, backward and one optimizer step over a batch. Samples whose
/// mask is empty after augmentation are skipped.
fn train_batch(
    params: &mut ModelParams<f32>,
    opt: &mut AdamState,
    batch: &[Sample],
    step: &Step,
    rng: &mut ChaCha8Rng,
    stats: &mut EpochStats,
) -> Result<()> {
    params.zero_grads();
    let mut used = 0usize;
    for raw in batch {
        let s = augment(raw, rng, step.augment)?;
        if !s.mask.iter().any(|&m| m) {
            log::warn!("skipping a training sample with no valid pixels");
            continue;
        }
        let fwd = forward(params, &s.net_input())?;
        let loss = coarse_fine_loss(&fwd.d_out, &fwd.d_3d, &s.gt, &s.mask, step.l1_only)?;
        let grads = backward(params, &fwd, &loss.grad_out, &loss.grad_3d)?;
        params.accumulate_grads(&grads)?;
        stats.loss += loss.value;
        stats.samples += 1;
        for ((&p, &g), &m) in fwd.d_out.data().iter().zip(s.gt.data()).zip(&s.mask) {
            if m {
                stats.abs_err += (p as f64 - g as f64).abs();
                stats.pixels += 1;
            }
        }
        used += 1;
    }
    if used == 0 {
        log::warn!("skipping an optimizer step: the batch has no valid pixels");
        return Ok(());
    }
    params.scale_grads(1.0 / used as f32);
    adam_step(params, opt, step.lr)
}

fn epoch_rows(
    epoch: usize,
    stats: &EpochStats,
    lr: f64,
    start: Instant,
    params: &ModelParams<f32>,
    val: &[EvalSample],
    l1_only: bool,
) -> Result<(Vec<MetricRow>, Option<f64>)> {
    let mut rows = vec![MetricRow {
        epoch,
        split: "train".into(),
        loss: stats.loss / stats.samples.max(1) as f64,
        mae_m: stats.abs_err / stats.pixels.max(1) as f64,
        relative_error: None,
        lr,
        seconds: start.elapsed().as_secs_f64(),
    }];
    let mut val_mae = None;
    if !val.is_empty() {
        let m = evaluate(params, val, l1_only)?;
        val_mae = Some(m.mae);
        rows.push(MetricRow {
            epoch,
            split: "val".into(),
            loss: m.loss,
            mae_m: m.mae,
            relative_error: m.relative_error,
            lr,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok((rows, val_mae))
}

fn log_rows(rows: &[MetricRow]) {
    for r in rows {
        log::info!(
            "epoch {} {}: loss {:.5} mae {:.5} m rel {} lr {:.2e} ({:.1}s)",
            r.epoch,
            r.split,
            r.loss,
            r.mae_m,
            r.relative_error.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
            r.lr,
            r.seconds
        );
    }
}

/// Supervised training. Samples are shuffled per epoch and augmented per
/// draw; the validation set only selects the returned `best` parameters.
pub fn fit(
    mut params: ModelParams<f32>,
    data: &dyn TrainingSet,
    config: &TrainConfig,
    val: &[EvalSample],
    observer: &mut Observer,
) -> Result<FitOutcome> {
    config.validate()?;
    ensure!(!data.is_empty(), "training set is empty");
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = AdamState::new(&params, config.adam);
    let mut metrics = Vec::new();
    let mut best: Option<(f64, usize, ModelParams<f32>)> = None;
    for epoch in 0..config.epochs {
        let start = Instant::now();
        let lr = config.lr_at(epoch);
        let step = Step {
            augment: &config.augment,
            l1_only: config.l1_only,
            lr,
        };
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let mut stats = EpochStats::default();
        for chunk in order.chunks(config.batch_size) {
            let batch = chunk.iter().map(|&i| data.draw(i, &mut rng)).collect::<Result<Vec<_>>>()?;
            train_batch(&mut params, &mut opt, &batch, &step, &mut rng, &mut stats)?;
        }
        let (rows, val_mae) = epoch_rows(epoch, &stats, lr, start, &params, val, config.l1_only)?;
        let improved = match (val_mae, &best) {
            (Some(m), None) => m.is_finite(),
            (Some(m), Some((b, _, _))) => m < *b,
            (None, _) => false,
        };
        if improved {
            best = Some((val_mae.expect("checked"), epoch, params.clone()));
        }
        log_rows(&rows);
        observer(&EpochEvent {
            epoch,
            rows: &rows,
            params: &params,
            optimizer: &opt,
            improved,
        })?;
        metrics.extend(rows);
    }
    let (best_params, best_epoch) = match best {
        Some((_, e, p)) => (p, Some(e)),
        None => (params.clone(), None),
    };
    Ok(FitOutcome {
        best: best_params,
        best_epoch,
        last: params,
        optimizer: opt,
        metrics,
    })
}

struct PseudoLabel {
    label: Tensor<f32>,
    version: usize,
}

/// Cyclic self-training on unlabeled `target` inputs.
///
/// Every `n_cycle` epochs the current model labels the unaugmented target
/// inputs. Each training slot then takes a pseudo-labeled target sample
/// with probability `p`, else the next shuffled source sample. Domain draws
/// use their own random stream, so `p = 0` trains exactly like [`fit`] with
/// the same seed and a constant learning rate.
pub fn adapt(
    mut params: ModelParams<f32>,
    source: &dyn TrainingSet,
    target: &[Sample],
    config: &AdaptConfig,
    val: &[EvalSample],
    observer: &mut Observer,
) -> Result<AdaptOutcome> {
    config.validate()?;
    ensure!(!target.is_empty(), "target set is empty");
    ensure!(!source.is_empty() || config.p == 1.0, "source set is empty");
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut domain_rng = ChaCha8Rng::seed_from_u64(config.seed);
    domain_rng.set_stream(1);
    let mut opt = AdamState::new(&params, config.adam);
    let mut labels: Vec<PseudoLabel> = Vec::new();
    let mut out = AdaptOutcome {
        params: params.clone(),
        optimizer: opt.clone(),
        metrics: Vec::new(),
        refresh_epochs: Vec::new(),
        label_uses: Vec::new(),
        source_draws: 0,
        target_draws: 0,
    };
    let slots = source.len().max(target.len());
    for epoch in 0..config.epochs {
        let start = Instant::now();
        let lr = config.lr_at(epoch);
        let step = Step {
            augment: &config.augment,
            l1_only: config.l1_only,
            lr,
        };
        if epoch % config.n_cycle == 0 {
            labels = target
                .iter()
                .map(|s| Ok(PseudoLabel { label: predict(&params, s)?, version: epoch }))
                .collect::<Result<_>>()?;
            out.refresh_epochs.push(epoch);
            log::info!("epoch {epoch}: refreshed {} pseudo-labels", labels.len());
        }
        let mut order: Vec<usize> = (0..source.len()).collect();
        order.shuffle(&mut rng);
        if order.is_empty() {
            order = vec![0; slots];
        }
        let mut stats = EpochStats::default();
        for chunk in order.chunks(config.batch_size) {
            let batch_target = config.whole_batch && domain_rng.random_bool(config.p);
            let mut batch = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let is_target = if config.whole_batch {
                    batch_target
                } else {
                    domain_rng.random_bool(config.p)
                };
                if is_target {
                    let t = domain_rng.random_range(0..target.len());
                    let pl = &labels[t];
                    out.label_uses.push(LabelUse { epoch, target: t, version: pl.version });
                    out.target_draws += 1;
                    batch.push(target[t].with_label(pl.label.clone(), target[t].mask.clone()));
                } else {
                    out.source_draws += 1;
                    batch.push(source.draw(i, &mut rng)?);
                }
            }
            train_batch(&mut params, &mut opt, &batch, &step, &mut rng, &mut stats)?;
        }
        let (rows, _) = epoch_rows(epoch, &stats, lr, start, &params, val, config.l1_only)?;
        log_rows(&rows);
        observer(&EpochEvent {
            epoch,
            rows: &rows,
            params: &params,
            optimizer: &opt,
            improved: false,
        })?;
        out.metrics.extend(rows);
    }
    out.params = params;
    out.optimizer = opt;
    Ok(out)
}
