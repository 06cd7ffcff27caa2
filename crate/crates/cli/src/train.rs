//! `train`: builds the dataset, trains all four toy models, writes gated
//! checkpoints plus training curves, and fails with a gate error when a
//! model misses its quality bar (artifacts are kept for diagnosis).

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use scoreadv_core::error::{Error, Result};
use scoreadv_core::metrics::desk_fid;
use scoreadv_core::models::checkpoint::{save_model, Descriptor};
use scoreadv_core::models::classifier::{accuracy, ConvClassifier, MlpClassifier};
use scoreadv_core::models::dataset::generate;
use scoreadv_core::models::denoiser::CondUNet;
use scoreadv_core::models::embedder::{verification_accuracy, ToyEmbedder};
use scoreadv_core::pipeline::sample_class;
use scoreadv_core::rng::{child_seed, stream};
use scoreadv_core::tensor::{ImageTensor, ValueRange};

use crate::config::Config;
use crate::rundir::{create_run_dir, subdir, Manifest};

/// Measured gate inputs, persisted as gates.json.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GatesReport {
    pub conv_accuracy: f64,
    pub mlp_accuracy: f64,
    pub embedder_verification: f64,
    pub denoiser_fid_samples: f64,
    pub denoiser_fid_noise: f64,
    pub classifier_accuracy_floor: f64,
    pub embedder_verification_floor: f64,
    pub denoiser_fid_factor: f64,
    pub passed: bool,
}

impl GatesReport {
    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.conv_accuracy < self.classifier_accuracy_floor {
            out.push(format!(
                "conv accuracy {:.3} < {:.2}",
                self.conv_accuracy, self.classifier_accuracy_floor
            ));
        }
        if self.mlp_accuracy < self.classifier_accuracy_floor {
            out.push(format!(
                "mlp accuracy {:.3} < {:.2}",
                self.mlp_accuracy, self.classifier_accuracy_floor
            ));
        }
        if self.embedder_verification < self.embedder_verification_floor {
            out.push(format!(
                "embedder verification {:.3} < {:.2}",
                self.embedder_verification, self.embedder_verification_floor
            ));
        }
        if self.denoiser_fid_samples * self.denoiser_fid_factor > self.denoiser_fid_noise {
            out.push(format!(
                "denoiser desk-FID {:.3} not {}x better than pure noise {:.3}",
                self.denoiser_fid_samples, self.denoiser_fid_factor, self.denoiser_fid_noise
            ));
        }
        out
    }
}

pub fn run(cfg: &Config) -> Result<PathBuf> {
    cfg.validate()?;
    let t0 = Instant::now();
    let dataset = generate(&cfg.dataset.spec())?;
    let shape = (1usize, cfg.dataset.resolution, cfg.dataset.resolution);
    let classes = cfg.dataset.classes;
    let schedule = cfg.schedule.spec().build()?;

    let tag = cfg.output.tag.clone().unwrap_or_else(|| "train".to_string());
    let run = create_run_dir(&cfg.output.root, &tag)?;
    subdir(&run, "checkpoints")?;
    subdir(&run, "records")?;
    let mut manifest = Manifest::new("train", cfg);
    manifest.dataset_checksum = dataset.checksum.clone();

    eprintln!("training conv classifier ...");
    let mut conv = ConvClassifier::new(shape, classes, cfg.train.classifier.seed)?;
    let conv_report = conv.train(&dataset.train, &cfg.train.classifier)?;
    let conv_acc = accuracy(&conv, &dataset.test)?;
    eprintln!("conv held-out accuracy {conv_acc:.3}");

    eprintln!("training mlp classifier ...");
    let mut mlp = MlpClassifier::new(shape, classes, cfg.train.mlp.seed);
    let mlp_report = mlp.train(&dataset.train, &cfg.train.mlp)?;
    let mlp_acc = accuracy(&mlp, &dataset.test)?;
    eprintln!("mlp held-out accuracy {mlp_acc:.3}");

    eprintln!("training embedder ...");
    let mut embedder = ToyEmbedder::new(shape, &cfg.train.embedder)?;
    let emb_report = embedder.train(&dataset.train, &cfg.train.embedder)?;
    let mut pair_rng = stream(child_seed(cfg.gates.sample_seed, 1));
    let verification = verification_accuracy(
        &embedder,
        &dataset.test,
        cfg.gates.verification_threshold,
        cfg.gates.verification_pairs,
        &mut pair_rng,
    )?;
    eprintln!("embedder verification {verification:.3}");

    eprintln!("training denoiser ...");
    let mut unet = CondUNet::new(shape, classes, &cfg.train.denoiser)?;
    let unet_report = unet.train(&dataset.train, &schedule, &cfg.train.denoiser)?;

    eprintln!("sampling for the denoiser realism gate ...");
    let n = cfg.gates.fid_sample_count;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let mut r = stream(child_seed(cfg.gates.sample_seed, 100 + i as u64));
        samples.push(sample_class(
            &unet,
            &schedule,
            i % classes,
            cfg.guidance.class_scale,
            &mut r,
        )?);
    }
    let mut noise_rng = stream(child_seed(cfg.gates.sample_seed, 2));
    let noise: Vec<ImageTensor> = (0..n)
        .map(|_| {
            ImageTensor::new(
                ndarray::Array3::from_shape_fn(shape, |_| {
                    rand::Rng::random::<f64>(&mut noise_rng)
                }),
                ValueRange::Pixel,
            )
        })
        .collect();
    let held: Vec<ImageTensor> = dataset.test.iter().map(|s| s.image.clone()).collect();
    let fid_samples = desk_fid(&samples, &held, &conv)?;
    let fid_noise = desk_fid(&noise, &held, &conv)?;
    eprintln!("denoiser desk-FID {fid_samples:.3} (pure noise {fid_noise:.3})");

    let gates = GatesReport {
        conv_accuracy: conv_acc,
        mlp_accuracy: mlp_acc,
        embedder_verification: verification,
        denoiser_fid_samples: fid_samples,
        denoiser_fid_noise: fid_noise,
        classifier_accuracy_floor: cfg.gates.classifier_accuracy,
        embedder_verification_floor: cfg.gates.embedder_verification,
        denoiser_fid_factor: cfg.gates.denoiser_fid_factor,
        passed: false,
    };
    let gates = GatesReport {
        passed: gates.failures().is_empty(),
        ..gates
    };

    let descriptor = |arch: &str, seed: u64| Descriptor {
        architecture: arch.to_string(),
        resolution: cfg.dataset.resolution,
        classes,
        seed,
    };
    let saves: [(&str, u64); 4] = [
        ("conv", cfg.train.classifier.seed),
        ("mlp", cfg.train.mlp.seed),
        ("embedder", cfg.train.embedder.seed),
        ("denoiser", cfg.train.denoiser.seed),
    ];
    let (a, b) = crate::models_io::save_checkpoint(&run, "conv", &conv, &descriptor("conv", saves[0].1))?;
    manifest.model_checksums.insert(a, b);
    let (a, b) = crate::models_io::save_checkpoint(&run, "mlp", &mlp, &descriptor("mlp", saves[1].1))?;
    manifest.model_checksums.insert(a, b);
    let (a, b) =
        crate::models_io::save_checkpoint(&run, "embedder", &embedder, &descriptor("embedder", saves[2].1))?;
    manifest.model_checksums.insert(a, b);
    let (a, b) =
        crate::models_io::save_checkpoint(&run, "denoiser", &unet, &descriptor("denoiser", saves[3].1))?;
    manifest.model_checksums.insert(a, b);

    save_model(&conv_report, &run.join("records/conv_losses.json"))?;
    save_model(&mlp_report, &run.join("records/mlp_losses.json"))?;
    save_model(&emb_report, &run.join("records/embedder_losses.json"))?;
    save_model(&unet_report, &run.join("records/denoiser_losses.json"))?;
    save_model(&gates, &run.join("gates.json"))?;

    for name in crate::models_io::CHECKPOINT_NAMES {
        manifest.record(&run, &format!("checkpoints/{name}.json"))?;
        manifest.record(&run, &format!("checkpoints/{name}.desc.json"))?;
    }
    for rel in [
        "records/conv_losses.json",
        "records/mlp_losses.json",
        "records/embedder_losses.json",
        "records/denoiser_losses.json",
        "gates.json",
    ] {
        manifest.record(&run, rel)?;
    }
    manifest.wall_time_s = t0.elapsed().as_secs_f64();
    manifest.save(&run)?;

    println!("train run: {}", run.display());
    if !gates.passed {
        return Err(Error::gate(gates.failures().join("; ")));
    }
    Ok(run)
}
