use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use radu_core::datagen::{generate_record, DomainParams, NoisyRecords, Record};
use radu_core::geometry::CameraIntrinsics;
use radu_core::net::{AugmentConfig, ModelConfig, ModelParams, Sample};
use radu_core::signal::ModulationConfig;
use radu_core::train::{
    adapt, evaluate, fit, load_checkpoint, save_checkpoint, AdaptConfig, Checkpoint, EpochEvent, EvalSample,
    TrainConfig,
};

fn records(n: usize, domain: &DomainParams, seed: u64) -> Vec<Record> {
    let k = CameraIntrinsics::default_for(8, 8);
    let m = ModulationConfig::default();
    (0..n).map(|i| generate_record(i, "train", domain, &k, &m, seed).unwrap()).collect()
}

fn samples(records: &[Record]) -> Vec<Sample> {
    records.iter().map(|r| r.observe_fixed().unwrap().sample).collect()
}

fn eval_set(records: &[Record]) -> Vec<EvalSample> {
    records.iter().map(|r| r.observe_fixed().unwrap().eval_sample()).collect()
}

fn tiny(seed: u64) -> ModelParams<f32> {
    ModelParams::init(ModelConfig::tiny(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn quiet(_: &EpochEvent) -> radu_core::Result<()> {
    Ok(())
}

fn train_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 2,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_learning_rate_freezes_parameters() {
    let data = samples(&records(3, &DomainParams::source(), 1));
    let start = tiny(0);
    let config = TrainConfig {
        lr: 0.0,
        ..train_config(2)
    };
    let out = fit(start.clone(), &data, &config, &[], &mut quiet).unwrap();
    assert_eq!(out.last.values(), start.values());
    assert_eq!(out.optimizer.step, 2 * 2);
}

#[test]
fn one_sample_one_epoch_is_one_step() {
    let data = samples(&records(1, &DomainParams::source(), 2));
    let start = tiny(1);
    let out = fit(start.clone(), &data, &train_config(1), &[], &mut quiet).unwrap();
    assert_eq!(out.optimizer.step, 1);
    assert_ne!(out.last.values(), start.values());
}

#[test]
fn ten_epochs_reduce_training_loss() {
    let data = samples(&records(4, &DomainParams::source(), 3));
    let config = TrainConfig {
        augment: AugmentConfig::disabled(),
        ..train_config(10)
    };
    let out = fit(tiny(2), &data, &config, &[], &mut quiet).unwrap();
    let train: Vec<f64> = out.metrics.iter().filter(|r| r.split == "train").map(|r| r.loss).collect();
    assert_eq!(train.len(), 10);
    assert!(train[9] < train[0], "loss went from {} to {}", train[0], train[9]);
}

#[test]
fn fit_is_deterministic_per_seed() {
    let recs = records(3, &DomainParams::source(), 4);
    let val = eval_set(&recs[..1]);
    let run = |seed| {
        let config = TrainConfig {
            seed,
            ..train_config(3)
        };
        fit(tiny(3), &NoisyRecords(&recs), &config, &val, &mut quiet).unwrap()
    };
    let (a, b, c) = (run(7), run(7), run(8));
    assert_eq!(a.last.values(), b.last.values());
    assert_eq!(a.best.values(), b.best.values());
    assert_eq!(a.best_epoch, b.best_epoch);
    assert_ne!(a.last.values(), c.last.values());
}

#[test]
fn best_parameters_track_validation() {
    let recs = records(3, &DomainParams::source(), 5);
    let val = eval_set(&recs[2..]);
    let mut seen = Vec::new();
    let mut observer = |ev: &EpochEvent| {
        if ev.improved {
            seen.push(ev.epoch);
        }
        Ok(())
    };
    let out = fit(tiny(4), &NoisyRecords(&recs[..2]), &train_config(4), &val, &mut observer).unwrap();
    assert_eq!(out.best_epoch, seen.last().copied());
    let best = evaluate(&out.best, &val, false).unwrap().mae;
    for row in out.metrics.iter().filter(|r| r.split == "val") {
        assert!(best <= row.mae_m + 1e-12);
    }
}

#[test]
fn checkpoints_round_trip() {
    let data = samples(&records(2, &DomainParams::source(), 6));
    let out = fit(tiny(5), &data, &train_config(1), &[], &mut quiet).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let ckpt = Checkpoint {
        params: out.last.clone(),
        optimizer: Some(out.optimizer.clone()),
        epoch: Some(0),
    };
    save_checkpoint(dir.path(), &ckpt).unwrap();
    let back = load_checkpoint(dir.path()).unwrap();
    assert_eq!(back.params.values(), out.last.values());
    assert_eq!(back.params.config, out.last.config);
    assert_eq!(back.optimizer.unwrap(), out.optimizer);
    assert_eq!(back.epoch, Some(0));
}

fn adapt_setup() -> (Vec<Record>, Vec<Sample>) {
    let source = records(4, &DomainParams::source(), 7);
    let target: Vec<Sample> = records(3, &DomainParams::target(), 8)
        .iter()
        .map(|r| r.observe_fixed().unwrap().unlabeled())
        .collect();
    (source, target)
}

#[test]
fn adapt_without_target_draws_matches_fit() {
    let (source, target) = adapt_setup();
    let config = AdaptConfig {
        p: 0.0,
        lr: 1e-3,
        epochs: 3,
        batch_size: 2,
        seed: 11,
        ..AdaptConfig::default()
    };
    let adapted = adapt(tiny(6), &NoisyRecords(&source), &target, &config, &[], &mut quiet).unwrap();
    let plain = TrainConfig {
        lr: 1e-3,
        epochs: 3,
        batch_size: 2,
        seed: 11,
        ..TrainConfig::default()
    };
    let fitted = fit(tiny(6), &NoisyRecords(&source), &plain, &[], &mut quiet).unwrap();
    assert_eq!(adapted.params.values(), fitted.last.values());
    assert_eq!(adapted.target_draws, 0);
}

#[test]
fn pseudo_labels_refresh_every_cycle() {
    let (source, target) = adapt_setup();
    let config = AdaptConfig {
        epochs: 100,
        n_cycle: 20,
        batch_size: 4,
        augment: AugmentConfig::disabled(),
        ..AdaptConfig::default()
    };
    let out = adapt(tiny(7), &NoisyRecords(&source[..1]), &target, &config, &[], &mut quiet).unwrap();
    assert_eq!(out.refresh_epochs, vec![0, 20, 40, 60, 80]);
    assert!(!out.label_uses.is_empty());
    for u in &out.label_uses {
        assert_eq!(u.version, u.epoch - u.epoch % 20, "stale label at epoch {}", u.epoch);
        assert!(u.target < target.len());
    }
}

#[test]
fn mixing_follows_probability() {
    let (source, target) = adapt_setup();
    for (p, lo, hi) in [(0.5, 0.4, 0.6), (1.0, 1.0, 1.0)] {
        let config = AdaptConfig {
            p,
            epochs: 60,
            batch_size: 4,
            lr: 0.0,
            augment: AugmentConfig::disabled(),
            ..AdaptConfig::default()
        };
        let out = adapt(tiny(8), &NoisyRecords(&source), &target, &config, &[], &mut quiet).unwrap();
        let total = out.source_draws + out.target_draws;
        assert_eq!(total, 60 * source.len());
        let frac = out.target_draws as f64 / total as f64;
        assert!((lo..=hi).contains(&frac), "p = {p}: target fraction {frac}");
    }
}

#[test]
fn whole_batch_mode_keeps_batches_pure() {
    let (source, target) = adapt_setup();
    let config = AdaptConfig {
        p: 0.5,
        epochs: 20,
        batch_size: 4,
        lr: 0.0,
        whole_batch: true,
        augment: AugmentConfig::disabled(),
        ..AdaptConfig::default()
    };
    let out = adapt(tiny(9), &NoisyRecords(&source), &target, &config, &[], &mut quiet).unwrap();
    // One batch per epoch, so every epoch is all source or all target.
    let mut per_epoch = vec![0usize; 20];
    for u in &out.label_uses {
        per_epoch[u.epoch] += 1;
    }
    assert!(per_epoch.iter().all(|&n| n == 0 || n == 4));
    assert_eq!(out.target_draws % 4, 0);
}

#[test]
fn adaptation_rejects_bad_configs() {
    let (source, target) = adapt_setup();
    for config in [
        AdaptConfig { p: 1.5, ..AdaptConfig::default() },
        AdaptConfig { n_cycle: 0, ..AdaptConfig::default() },
        AdaptConfig { lr: -1.0, ..AdaptConfig::default() },
    ] {
        assert!(adapt(tiny(10), &NoisyRecords(&source), &target, &config, &[], &mut quiet).is_err());
    }
    assert!(adapt(tiny(10), &NoisyRecords(&source), &[], &AdaptConfig::default(), &[], &mut quiet).is_err());
}
