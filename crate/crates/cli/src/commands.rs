use std::fs;
use std::path::Path;

use anyhow::{bail, Context};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use radu_core::datagen::{generate_dataset, Dataset, DomainParams, NoisyRecords, Record};
use radu_core::geometry::CameraIntrinsics;
use radu_core::io::{read_json, read_rten_as, write_json, write_pfm, write_rten};
use radu_core::net::{AugmentConfig, ModelConfig, ModelParams, Sample};
use radu_core::signal::ModulationConfig;
use radu_core::train::{
    self, append_metrics, load_checkpoint, predict, save_checkpoint, AdaptConfig, Checkpoint, EpochEvent, ErrorSums,
    EvalSample, TrainConfig,
};
use radu_core::verify;
use radu_core::Tensor;

use crate::{
    AdaptArgs, Domain, EvalArgs, Failure, GradcheckArgs, InferArgs, Init, ModelArgs, ModelPreset, SimulateArgs,
    TrainArgs,
};

type CmdResult = Result<(), Failure>;

pub const METRICS_FILE: &str = "metrics.csv";
pub const REPORT_HEADER: &str = "split,samples,pixels,mae_m,baseline_mae_m,relative_error";

pub fn simulate(a: SimulateArgs) -> CmdResult {
    let mut domain = match a.domain {
        Domain::Source => DomainParams::source(),
        Domain::Target => DomainParams::target(),
    };
    if let Some(g) = a.g_mpi {
        domain.g_mpi = g;
    }
    if a.noise_free {
        domain.noise = None;
    }
    let (h, w) = a.size;
    let k = CameraIntrinsics::default_for(w, h);
    let modulation = ModulationConfig::default();
    let manifest = generate_dataset(a.scenes, &domain, &k, &modulation, &a.out, a.seed)?;
    log::info!(
        "wrote {} scenes ({} train, {} val, {} test) to {}",
        manifest.scenes,
        manifest.splits.train.len(),
        manifest.splits.val.len(),
        manifest.splits.test.len(),
        a.out.display()
    );
    Ok(())
}

fn model_config(m: &ModelArgs) -> anyhow::Result<ModelConfig> {
    let config = match &m.model_config {
        Some(path) => read_json(path)?,
        None => match m.model {
            ModelPreset::Default => ModelConfig::default(),
            ModelPreset::Desk => ModelConfig::desk(),
            ModelPreset::Tiny => ModelConfig::tiny(),
        },
    };
    config.validate()?;
    Ok(config)
}

fn fresh_params(m: &ModelArgs, seed: u64) -> anyhow::Result<ModelParams<f32>> {
    let config = model_config(m)?;
    // Separate stream so initialization does not shadow the shuffling order.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    Ok(match m.init {
        Init::Random => ModelParams::init(config, &mut rng)?,
        Init::Passthrough => ModelParams::passthrough(config, &mut rng)?,
    })
}

/// Removes a stale metrics log so reruns into the same directory start clean.
fn reset_metrics(out: &Path) -> anyhow::Result<std::path::PathBuf> {
    let path = out.join(METRICS_FILE);
    if path.exists() {
        fs::remove_file(&path).with_context(|| format!("removing {}", path.display()))?;
    }
    Ok(path)
}

fn checkpoint_of(params: &ModelParams<f32>, optimizer: Option<&train::AdamState>, epoch: Option<usize>) -> Checkpoint {
    Checkpoint {
        params: params.clone(),
        optimizer: optimizer.cloned(),
        epoch,
    }
}

fn augment_config(disabled: bool, crop: Option<(usize, usize)>) -> AugmentConfig {
    let base = if disabled {
        AugmentConfig::disabled()
    } else {
        AugmentConfig::default()
    };
    AugmentConfig { crop, ..base }
}

pub fn train(a: TrainArgs) -> CmdResult {
    let data = Dataset::open(&a.dataset)?;
    let mut records = data.records("train")?;
    if let Some(n) = a.limit {
        records.truncate(n);
    }
    if records.is_empty() {
        return Err(anyhow::anyhow!("{} has no training scenes", a.dataset.display()).into());
    }
    let val = data.eval_samples("val")?;
    let params = match &a.checkpoint {
        Some(dir) => load_checkpoint(dir)?.params,
        None => fresh_params(&a.model, a.seed)?,
    };
    let config = TrainConfig {
        lr: a.lr,
        decay_factor: a.decay,
        batch_size: a.batch_size,
        epochs: a.epochs,
        seed: a.seed,
        l1_only: a.l1_only,
        augment: augment_config(a.no_augment, a.crop),
        ..TrainConfig::default()
    };
    config.validate()?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_json(&a.out.join("train_config.json"), &config)?;
    let metrics = reset_metrics(&a.out)?;
    log::info!(
        "training {} parameters on {} scenes, {} validation scenes",
        params.num_scalars(),
        records.len(),
        val.len()
    );
    let (best_dir, last_dir) = (a.out.join("best"), a.out.join("last"));
    let mut observer = |ev: &EpochEvent| -> radu_core::Result<()> {
        append_metrics(&metrics, ev.rows)?;
        let ckpt = checkpoint_of(ev.params, Some(ev.optimizer), Some(ev.epoch));
        if ev.improved {
            save_checkpoint(&best_dir, &ckpt)?;
        }
        save_checkpoint(&last_dir, &ckpt)
    };
    let outcome = train::fit(params, &NoisyRecords(&records), &config, &val, &mut observer)?;
    if outcome.best_epoch.is_none() {
        let epoch = config.epochs.checked_sub(1);
        save_checkpoint(&best_dir, &checkpoint_of(&outcome.best, Some(&outcome.optimizer), epoch))?;
    }
    match outcome.best_epoch {
        Some(e) => log::info!("best validation epoch {e}; checkpoints in {}", a.out.display()),
        None => log::info!("no validation improvement recorded; best equals last in {}", a.out.display()),
    }
    Ok(())
}

pub fn adapt(a: AdaptArgs) -> CmdResult {
    let start = load_checkpoint(&a.checkpoint)?;
    let source = Dataset::open(&a.source)?;
    let target = Dataset::open(&a.target)?;
    let source_records = source.records("train")?;
    // Target labels are dropped here; only the inputs and their validity remain.
    let target_inputs: Vec<Sample> = target
        .records(&a.target_split)?
        .iter()
        .map(|r| Ok(r.observe_fixed()?.unlabeled()))
        .collect::<radu_core::Result<_>>()?;
    // Scored for the log only; nothing here feeds back into training.
    let val = target.eval_samples("val")?;
    let config = AdaptConfig {
        p: a.p,
        n_cycle: a.n_cycle,
        lr: a.lr,
        decay_factor: a.decay,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.seed,
        l1_only: a.l1_only,
        augment: augment_config(a.no_augment, a.crop),
        whole_batch: a.whole_batch,
        ..AdaptConfig::default()
    };
    config.validate()?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_json(&a.out.join("adapt_config.json"), &config)?;
    let metrics = reset_metrics(&a.out)?;
    let last_dir = a.out.join("last");
    let mut observer = |ev: &EpochEvent| -> radu_core::Result<()> {
        append_metrics(&metrics, ev.rows)?;
        save_checkpoint(&last_dir, &checkpoint_of(ev.params, Some(ev.optimizer), Some(ev.epoch)))
    };
    let outcome = train::adapt(start.params, &NoisyRecords(&source_records), &target_inputs, &config, &val, &mut observer)?;
    let epoch = config.epochs.checked_sub(1);
    save_checkpoint(&last_dir, &checkpoint_of(&outcome.params, Some(&outcome.optimizer), epoch))?;
    write_json(
        &a.out.join("adapt_summary.json"),
        &serde_json::json!({
            "refresh_epochs": outcome.refresh_epochs,
            "source_draws": outcome.source_draws,
            "target_draws": outcome.target_draws,
        }),
    )?;
    log::info!(
        "adapted with {} source and {} target draws; checkpoint in {}",
        outcome.source_draws,
        outcome.target_draws,
        last_dir.display()
    );
    Ok(())
}

/// Where predictions come from during evaluation.
enum Predictor {
    Model(ModelParams<f32>),
    Saved(std::path::PathBuf),
}

impl Predictor {
    fn predict(&self, split: &str, id: &str, sample: &Sample) -> anyhow::Result<Tensor<f32>> {
        match self {
            Predictor::Model(p) => Ok(predict(p, sample)?),
            Predictor::Saved(dir) => {
                let path = dir.join(split).join(format!("{id}.rten"));
                let t: Tensor<f32> = read_rten_as(&path)?;
                if t.shape() != sample.gt.shape() {
                    bail!("{} has shape {:?}, expected {:?}", path.display(), t.shape(), sample.gt.shape());
                }
                Ok(t)
            }
        }
    }
}

/// Absolute error on masked pixels, zero elsewhere.
fn error_map(pred: &Tensor<f32>, sample: &Sample) -> radu_core::Result<Tensor<f32>> {
    let err = pred
        .data()
        .iter()
        .zip(sample.gt.data())
        .zip(&sample.mask)
        .map(|((&p, &g), &m)| if m { (p - g).abs() } else { 0.0 })
        .collect();
    Tensor::from_vec(sample.gt.shape(), err)
}

fn split_inputs(data: &Dataset, split: &str) -> anyhow::Result<Vec<(String, EvalSample)>> {
    let records: Vec<Record> = data.records(split)?;
    records
        .iter()
        .map(|r| Ok((r.meta.id.clone(), r.observe_fixed()?.eval_sample())))
        .collect()
}

pub fn eval(a: EvalArgs) -> CmdResult {
    let predictor = match (&a.checkpoint, &a.predictions) {
        (Some(c), None) => Predictor::Model(load_checkpoint(c)?.params),
        (None, Some(p)) => Predictor::Saved(p.clone()),
        _ => return Err(anyhow::anyhow!("give exactly one of --checkpoint and --predictions").into()),
    };
    let data = Dataset::open(&a.dataset)?;
    let mut lines = vec![REPORT_HEADER.to_string()];
    for split in &a.splits {
        let items = split_inputs(&data, split)?;
        let mut sums = ErrorSums::default();
        for (id, item) in &items {
            let s = &item.sample;
            let pred = predictor.predict(split, id, s)?;
            sums.add(pred.data(), item.baseline.data(), s.gt.data(), &s.mask);
            if let Some(maps) = &a.maps {
                write_pfm(&maps.join(split).join(format!("{id}.pfm")), &error_map(&pred, s)?)?;
            }
        }
        let rel = sums.relative_error().map(|v| v.to_string()).unwrap_or_default();
        println!(
            "{split}: {} samples, {} pixels, MAE {:.4} m, baseline MAE {:.4} m, relative error {}",
            items.len(),
            sums.pixels,
            sums.mae(),
            sums.baseline_mae(),
            if rel.is_empty() { "-" } else { &rel }
        );
        lines.push(format!(
            "{split},{},{},{},{},{rel}",
            items.len(),
            sums.pixels,
            sums.mae(),
            sums.baseline_mae()
        ));
    }
    let mut text = lines.join("\n");
    text.push('\n');
    radu_core::io::write_file(&a.report, text.as_bytes())?;
    Ok(())
}

pub fn infer(a: InferArgs) -> CmdResult {
    let params = load_checkpoint(&a.checkpoint)?.params;
    let data = Dataset::open(&a.dataset)?;
    let mut count = 0;
    for split in &a.splits {
        for (id, item) in split_inputs(&data, split)? {
            let pred = predict(&params, &item.sample)?;
            let dir = a.out.join(split);
            write_rten(&dir.join(format!("{id}.rten")), &pred)?;
            write_pfm(&dir.join(format!("{id}.pfm")), &pred)?;
            count += 1;
        }
    }
    log::info!("wrote {count} predictions to {}", a.out.display());
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> CmdResult {
    let reports = verify::run_all(a.seed)?;
    for r in &reports {
        println!("{r}");
    }
    if let Some(path) = &a.report {
        let rows: Vec<_> = reports
            .iter()
            .map(|r| {
                serde_json::json!({
                    "op": r.op,
                    "max_rel_error": r.max_rel_error,
                    "elements_checked": r.elements_checked,
                    "tol": r.tol,
                    "passed": r.passed,
                })
            })
            .collect();
        write_json(path, &rows)?;
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.op.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Verification(format!("backward rules disagree with finite differences: {}", failed.join(", "))))
    }
}
