//! Loading trained models out of a train-run directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use scoreadv_core::error::{Error, Result};
use scoreadv_core::models::checkpoint::{file_sha256, load_model, Descriptor};
use scoreadv_core::models::classifier::{ConvClassifier, MlpClassifier};
use scoreadv_core::models::denoiser::CondUNet;
use scoreadv_core::models::embedder::ToyEmbedder;
use scoreadv_core::models::TargetModelAdapter;
use scoreadv_core::schedule::{NoiseSchedule, ScheduleSpec};

use crate::rundir::Manifest;

pub const CHECKPOINT_NAMES: [&str; 4] = ["conv", "mlp", "embedder", "denoiser"];

pub struct LoadedModels {
    pub dir: PathBuf,
    pub conv: ConvClassifier,
    pub mlp: MlpClassifier,
    pub embedder: ToyEmbedder,
    pub unet: CondUNet,
    pub schedule_spec: ScheduleSpec,
    pub schedule: NoiseSchedule,
    pub classes: usize,
    pub resolution: usize,
    pub dataset_checksum: String,
    pub checksums: BTreeMap<String, String>,
}

impl LoadedModels {
    pub fn classifier(&self, id: &str) -> Result<&dyn TargetModelAdapter> {
        match id {
            "conv" => Ok(&self.conv),
            "mlp" => Ok(&self.mlp),
            other => Err(Error::parameter(format!(
                "unknown classifier id {other}, expected conv or mlp"
            ))),
        }
    }
}

fn checkpoint_path(dir: &Path, name: &str) -> PathBuf {
    dir.join("checkpoints").join(format!("{name}.json"))
}

fn descriptor_path(dir: &Path, name: &str) -> PathBuf {
    dir.join("checkpoints").join(format!("{name}.desc.json"))
}

/// Loads all four models plus the schedule they were trained under.
pub fn load_models(dir: &Path) -> Result<LoadedModels> {
    let manifest = Manifest::load(dir)?;
    if manifest.command != "train" {
        return Err(Error::ingestion(format!(
            "{} is a {} run, expected a train run",
            dir.display(),
            manifest.command
        )));
    }
    let mut checksums = BTreeMap::new();
    for name in CHECKPOINT_NAMES {
        let path = checkpoint_path(dir, name);
        if !path.is_file() {
            return Err(Error::ingestion(format!(
                "missing checkpoint {}",
                path.display()
            )));
        }
        let desc: Descriptor = load_model(&descriptor_path(dir, name))?;
        if desc.architecture != name {
            return Err(Error::ingestion(format!(
                "descriptor for {name} names architecture {}",
                desc.architecture
            )));
        }
        checksums.insert(format!("{name}.json"), file_sha256(&path)?);
    }
    let schedule_spec = manifest.schedule;
    Ok(LoadedModels {
        dir: dir.to_path_buf(),
        conv: load_model(&checkpoint_path(dir, "conv"))?,
        mlp: load_model(&checkpoint_path(dir, "mlp"))?,
        embedder: load_model(&checkpoint_path(dir, "embedder"))?,
        unet: load_model(&checkpoint_path(dir, "denoiser"))?,
        schedule: schedule_spec.build()?,
        schedule_spec,
        classes: manifest.config.dataset.classes,
        resolution: manifest.config.dataset.resolution,
        dataset_checksum: manifest.dataset_checksum.clone(),
        checksums,
    })
}

/// Writes one checkpoint plus its descriptor; returns (file name, sha256).
pub fn save_checkpoint<T: serde::Serialize>(
    dir: &Path,
    name: &str,
    model: &T,
    desc: &Descriptor,
) -> Result<(String, String)> {
    let path = checkpoint_path(dir, name);
    scoreadv_core::models::checkpoint::save_model(model, &path)?;
    scoreadv_core::models::checkpoint::save_model(desc, &descriptor_path(dir, name))?;
    Ok((format!("{name}.json"), file_sha256(&path)?))
}
