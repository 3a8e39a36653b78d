//! Dataset generation, the on-disk layout and noisy observation of records.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::{raycast_scene, render_components, sample_scene, DomainLabel, DomainParams, SceneSpec};
use crate::error::{ensure, Error, Result};
use crate::geometry::CameraIntrinsics;
use crate::io::{read_json, read_rten_as, write_json, write_rten};
use crate::net::Sample;
use crate::signal::{
    apply_sensor_noise, extract_features, max_distance, orders_for_range, recover_phasor, synthesize_taps,
    unwrapped_distance, CorrelationFrame, ModulationConfig, NoiseModel, PhasorMap, UnwrapPolicy,
};
use crate::tensor::Tensor;
use crate::train::{EvalSample, TrainingSet};

pub const DATASET_MANIFEST: &str = "manifest.json";
pub const SPLITS: [&str; 3] = ["train", "val", "test"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub id: String,
    pub split: String,
    pub domain: DomainLabel,
    /// Seed of the whole dataset.
    pub dataset_seed: u64,
    pub scene_index: usize,
    /// Seed of the fixed noise realization used for evaluation.
    pub noise_seed: u64,
    pub noise: Option<NoiseModel>,
    pub intrinsics: CameraIntrinsics,
    pub modulation: ModulationConfig,
    pub scene: SceneSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitIds {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitIds {
    pub fn get(&self, split: &str) -> Option<&[String]> {
        match split {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub scenes: usize,
    pub height: usize,
    pub width: usize,
    pub domain: DomainParams,
    pub modulation: ModulationConfig,
    pub splits: SplitIds,
}

/// Scene counts per split: 10% validation and 10% test, rounded down.
pub fn split_counts(n: usize) -> (usize, usize, usize) {
    let val = n / 10;
    let test = n / 10;
    (n - val - test, val, test)
}

/// Noise-free taps, label and metadata of one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub taps: CorrelationFrame,
    /// `[H, W]` meters, zero on misses.
    pub gt: Tensor<f64>,
    pub hit: Vec<bool>,
    pub meta: SampleMeta,
}

/// One noisy capture of a record.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub sample: Sample,
    /// Input validity alone, without the label's hit mask.
    pub input_valid: Vec<bool>,
    /// `[H, W]` conventional two-frequency ToF distance.
    pub baseline: Tensor<f32>,
}

impl Observation {
    pub fn eval_sample(self) -> EvalSample {
        EvalSample {
            sample: self.sample,
            baseline: self.baseline,
        }
    }

    /// The input with its label removed, as seen by unsupervised training.
    pub fn unlabeled(self) -> Sample {
        let gt = Tensor::zeros(self.sample.gt.shape());
        self.sample.with_label(gt, self.input_valid)
    }
}

/// Unwrapped distance from the lowest and highest frequency over the range
/// of the lowest one.
pub fn tof_baseline(phasors: &PhasorMap) -> Result<Vec<f64>> {
    let freqs = &phasors.config.frequencies;
    let (lo, hi) = (0, freqs.len() - 1);
    let orders = orders_for_range(max_distance(freqs[lo]), freqs[lo], freqs[hi]);
    unwrapped_distance(phasors, lo, hi, orders)
}

impl Record {
    pub fn id(&self) -> &str {
        &self.meta.id
    }

    /// Observes the taps through `noise` (none for noise-free data).
    pub fn observe_with<R: Rng + ?Sized>(&self, noise: Option<&NoiseModel>, rng: &mut R) -> Result<Observation> {
        let frame = match noise {
            Some(n) => apply_sensor_noise(&self.taps, n, rng)?,
            None => self.taps.clone(),
        };
        let phasors = recover_phasor(&frame)?;
        let stack = extract_features(&phasors, UnwrapPolicy::None)?;
        let baseline = tof_baseline(&phasors)?;
        let sample = Sample::from_stack(&stack, self.gt.data(), &self.hit, self.meta.intrinsics)?;
        let k = self.meta.intrinsics;
        Ok(Observation {
            sample,
            input_valid: stack.valid,
            baseline: Tensor::from_vec(&[k.height, k.width], baseline.iter().map(|&v| v as f32).collect())?,
        })
    }

    /// A fresh noise realization from the record's own noise model.
    pub fn observe<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Observation> {
        self.observe_with(self.meta.noise.as_ref(), rng)
    }

    /// The record's fixed noise realization, used for evaluation.
    pub fn observe_fixed(&self) -> Result<Observation> {
        self.observe(&mut ChaCha8Rng::seed_from_u64(self.meta.noise_seed))
    }
}

/// Records that yield a fresh noise realization on every draw.
pub struct NoisyRecords<'a>(pub &'a [Record]);

impl TrainingSet for NoisyRecords<'_> {
    fn len(&self) -> usize {
        self.0.len()
    }

    fn draw(&self, index: usize, rng: &mut ChaCha8Rng) -> Result<Sample> {
        let r = self
            .0
            .get(index)
            .ok_or_else(|| Error::Contract(format!("record index {index} out of range")))?;
        Ok(r.observe(rng)?.sample)
    }
}

/// Generates one scene's record without touching the disk.
pub fn generate_record(
    index: usize,
    split: &str,
    domain: &DomainParams,
    intrinsics: &CameraIntrinsics,
    modulation: &ModulationConfig,
    seed: u64,
) -> Result<Record> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    let scene = sample_scene(domain, &mut rng)?;
    let hits = raycast_scene(&scene, intrinsics)?;
    let comps = render_components(&scene, &hits, modulation)?;
    let taps = synthesize_taps(&comps, intrinsics.height, intrinsics.width, modulation)?;
    let gt = hits.iter().map(|h| h.map_or(0.0, |h| h.distance)).collect();
    let hit = hits.iter().map(Option::is_some).collect();
    let noise_seed = rng.random();
    Ok(Record {
        taps,
        gt: Tensor::from_vec(&[intrinsics.height, intrinsics.width], gt)?,
        hit,
        meta: SampleMeta {
            id: format!("{index:05}"),
            split: split.to_string(),
            domain: domain.label,
            dataset_seed: seed,
            scene_index: index,
            noise_seed,
            noise: domain.noise,
            intrinsics: *intrinsics,
            modulation: modulation.clone(),
            scene,
        },
    })
}

fn sample_dir(root: &Path, split: &str, id: &str) -> PathBuf {
    root.join(split).join(id)
}

pub fn write_record(root: &Path, record: &Record) -> Result<()> {
    let dir = sample_dir(root, &record.meta.split, &record.meta.id);
    write_rten(&dir.join("taps.rten"), &record.taps.taps)?;
    write_rten(&dir.join("gt.rten"), &record.gt)?;
    let mask: Vec<f32> = record.hit.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    write_rten(&dir.join("mask.rten"), &Tensor::from_vec(record.gt.shape(), mask)?)?;
    write_json(&dir.join("meta.json"), &record.meta)
}

pub fn read_record(root: &Path, split: &str, id: &str) -> Result<Record> {
    let dir = sample_dir(root, split, id);
    let meta: SampleMeta = read_json(&dir.join("meta.json"))?;
    let taps = CorrelationFrame::new(read_rten_as(&dir.join("taps.rten"))?, meta.modulation.clone())?;
    let gt: Tensor<f64> = read_rten_as(&dir.join("gt.rten"))?;
    let mask_path = dir.join("mask.rten");
    let mask: Tensor<f32> = read_rten_as(&mask_path)?;
    let k = meta.intrinsics;
    ensure!(
        gt.shape() == [k.height, k.width] && mask.shape() == gt.shape(),
        "label or mask shape does not match the intrinsics in {}",
        dir.display()
    );
    ensure!(
        taps.height() == k.height && taps.width() == k.width,
        "tap shape does not match the intrinsics in {}",
        dir.display()
    );
    Ok(Record {
        taps,
        gt,
        hit: mask.data().iter().map(|&m| m > 0.5).collect(),
        meta,
    })
}

/// Generates `n` scenes and writes the dataset layout under `out`.
/// Identical arguments produce byte-identical trees.
pub fn generate_dataset(
    n: usize,
    domain: &DomainParams,
    intrinsics: &CameraIntrinsics,
    modulation: &ModulationConfig,
    out: &Path,
    seed: u64,
) -> Result<DatasetManifest> {
    domain.validate()?;
    intrinsics.validate()?;
    ensure!(n >= 1, "need at least one scene");
    let (n_train, n_val, _) = split_counts(n);
    let mut splits = SplitIds {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for i in 0..n {
        let split = if i < n_train {
            "train"
        } else if i < n_train + n_val {
            "val"
        } else {
            "test"
        };
        let record = generate_record(i, split, domain, intrinsics, modulation, seed)?;
        write_record(out, &record)?;
        let ids = match split {
            "train" => &mut splits.train,
            "val" => &mut splits.val,
            _ => &mut splits.test,
        };
        ids.push(record.meta.id);
    }
    let manifest = DatasetManifest {
        format: "radu-dataset".into(),
        version: 1,
        seed,
        scenes: n,
        height: intrinsics.height,
        width: intrinsics.width,
        domain: domain.clone(),
        modulation: modulation.clone(),
        splits,
    };
    write_json(&out.join(DATASET_MANIFEST), &manifest)?;
    Ok(manifest)
}

/// A dataset directory opened through its manifest.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let manifest: DatasetManifest = read_json(&root.join(DATASET_MANIFEST))?;
        ensure!(
            manifest.format == "radu-dataset" && manifest.version == 1,
            "{} is not a version 1 dataset manifest",
            root.display()
        );
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn ids(&self, split: &str) -> Result<&[String]> {
        self.manifest
            .splits
            .get(split)
            .ok_or_else(|| Error::Contract(format!("unknown split {split:?}; expected one of {SPLITS:?}")))
    }

    pub fn records(&self, split: &str) -> Result<Vec<Record>> {
        self.ids(split)?
            .iter()
            .map(|id| read_record(&self.root, split, id))
            .collect()
    }

    /// Fixed-noise evaluation samples of a split.
    pub fn eval_samples(&self, split: &str) -> Result<Vec<EvalSample>> {
        self.records(split)?
            .iter()
            .map(|r| Ok(r.observe_fixed()?.eval_sample()))
            .collect()
    }
}
