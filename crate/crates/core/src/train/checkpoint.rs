//! Checkpoint directories: `manifest.json` plus one RTEN file per
//! parameter tensor and, optionally, per ADAM moment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use crate::error::{ensure, Error, Result};
use crate::io::{read_json, read_rten_as, write_json, write_rten};
use crate::net::{ModelConfig, ModelParams};
use crate::tensor::Tensor;

pub const CHECKPOINT_MANIFEST: &str = "manifest.json";
const FORMAT: &str = "radu-checkpoint";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    pub optimizer: Option<AdamState>,
    /// Last completed epoch.
    pub epoch: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OptimizerEntry {
    config: AdamConfig,
    step: u64,
    m: Vec<String>,
    v: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    model: ModelConfig,
    epoch: Option<usize>,
    tensors: Vec<TensorEntry>,
    optimizer: Option<OptimizerEntry>,
}

fn file_name(dir: &str, name: &str) -> String {
    format!("{dir}/{name}.rten")
}

pub fn save_checkpoint(dir: &Path, ckpt: &Checkpoint) -> Result<()> {
    let p = &ckpt.params;
    let mut tensors = Vec::with_capacity(p.slots().len());
    for (name, slot) in p.names().iter().zip(p.slots()) {
        let file = file_name("params", name);
        write_rten(&dir.join(&file), &slot.value)?;
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: slot.value.shape().to_vec(),
            file,
        });
    }
    let optimizer = match &ckpt.optimizer {
        None => None,
        Some(opt) => {
            ensure!(opt.m.len() == p.slots().len(), "optimizer state does not match the parameters");
            let mut m = Vec::new();
            let mut v = Vec::new();
            for (i, name) in p.names().iter().enumerate() {
                let (fm, fv) = (file_name("adam_m", name), file_name("adam_v", name));
                write_rten(&dir.join(&fm), &opt.m[i])?;
                write_rten(&dir.join(&fv), &opt.v[i])?;
                m.push(fm);
                v.push(fv);
            }
            Some(OptimizerEntry {
                config: opt.config,
                step: opt.step,
                m,
                v,
            })
        }
    };
    let manifest = Manifest {
        format: FORMAT.into(),
        version: 1,
        model: p.config.clone(),
        epoch: ckpt.epoch,
        tensors,
        optimizer,
    };
    write_json(&dir.join(CHECKPOINT_MANIFEST), &manifest)
}

fn read_all(dir: &Path, files: &[String], shapes: &[Vec<usize>]) -> Result<Vec<Tensor<f32>>> {
    files
        .iter()
        .zip(shapes)
        .map(|(f, shape)| {
            let path: PathBuf = dir.join(f);
            let t: Tensor<f32> = read_rten_as(&path)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Format {
                    file: path.display().to_string(),
                    offset: 0,
                    message: format!("shape {:?} does not match manifest {:?}", t.shape(), shape),
                });
            }
            Ok(t)
        })
        .collect()
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest_path = dir.join(CHECKPOINT_MANIFEST);
    let manifest: Manifest = read_json(&manifest_path)?;
    ensure!(
        manifest.format == FORMAT && manifest.version == 1,
        "{} is not a version 1 checkpoint manifest",
        manifest_path.display()
    );
    let layout = manifest.model.parameter_layout();
    ensure!(
        layout.len() == manifest.tensors.len()
            && layout.iter().zip(&manifest.tensors).all(|((n, s), e)| *n == e.name && *s == e.shape),
        "checkpoint tensors do not match the model layout in {}",
        manifest_path.display()
    );
    let shapes: Vec<Vec<usize>> = manifest.tensors.iter().map(|e| e.shape.clone()).collect();
    let files: Vec<String> = manifest.tensors.iter().map(|e| e.file.clone()).collect();
    let params = ModelParams::from_tensors(manifest.model.clone(), read_all(dir, &files, &shapes)?)?;
    let optimizer = match manifest.optimizer {
        None => None,
        Some(o) => {
            ensure!(
                o.m.len() == shapes.len() && o.v.len() == shapes.len(),
                "optimizer moments do not match the parameters"
            );
            Some(AdamState {
                config: o.config,
                step: o.step,
                m: read_all(dir, &o.m, &shapes)?,
                v: read_all(dir, &o.v, &shapes)?,
            })
        }
    };
    Ok(Checkpoint {
        params,
        optimizer,
        epoch: manifest.epoch,
    })
}
