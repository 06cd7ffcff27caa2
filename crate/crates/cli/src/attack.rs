//! `attack`: runs a batch of guided attacks against a trained surrogate and
//! persists adversarial PNGs, unguided same-seed baselines, per-attack
//! records, optional saliency masks, and the run manifest.
//!
//! Instance `i` attacks conditioning class `i % classes` toward target
//! class `(label + 1 + i / classes) % classes` (classification mode), so
//! every ordered class pair appears as the batch grows.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use scoreadv_core::error::{Error, Result};
use scoreadv_core::guidance::{AttackTarget, GuidanceConfig};
use scoreadv_core::metrics::attack_success_rate;
use scoreadv_core::models::checkpoint::save_model;
use scoreadv_core::pipeline::{
    run_attack_batch, sample_class, AttackInstance, AttackModels, AttackOptions, AttackResult,
};
use scoreadv_core::rng::{child_seed, stream};
use scoreadv_core::saliency::SaliencyMethod;
use scoreadv_core::tensor::ImageTensor;

use crate::config::Config;
use crate::models_io::LoadedModels;
use crate::pngio::{load_gray, save_gray, save_map};
use crate::rundir::{create_run_dir, subdir, Manifest};

/// One attack's deterministic on-disk record.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttackRecord {
    pub index: usize,
    pub label: usize,
    pub target_class: Option<usize>,
    pub seed: u64,
    pub success: bool,
    pub success_per_cycle: Vec<bool>,
    pub final_prediction: Option<usize>,
    pub final_similarity: Option<f64>,
    pub steps_run: usize,
    pub denoiser_calls: usize,
    pub gradient_calls: usize,
    pub model_forward_calls: usize,
    pub image: String,
    pub baseline: String,
    pub mask: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MaskRecord {
    pub method: SaliencyMethod,
    pub layer: String,
    pub class: usize,
    pub norm_min: f64,
    pub norm_max: f64,
    pub forward_calls: usize,
    pub gradient_calls: usize,
    pub png: String,
}

/// Everything a caller needs to summarize a finished batch.
pub struct BatchOutcome {
    pub results: Vec<AttackResult>,
    pub adversarial: Vec<ImageTensor>,
    pub baselines: Vec<ImageTensor>,
    pub asr: f64,
    /// (min, max) over every mask pixel, when saliency ran.
    pub mask_bounds: Option<(f64, f64)>,
    pub written: Vec<String>,
    pub wall_time_s: f64,
}

/// Builds the per-instance conditioning label and classification target.
pub fn instance_classes(i: usize, classes: usize) -> (usize, usize) {
    let label = i % classes;
    let offset = if classes > 1 {
        1 + (i / classes) % (classes - 1)
    } else {
        0
    };
    (label, (label + offset) % classes)
}

/// Per-attack reference images for mask fusion.
pub enum ReferenceSource {
    None,
    /// One shared reference image.
    Fixed(ImageTensor),
    /// Deterministic pick from the test split: image `i / classes` of the
    /// instance's conditioning class.
    Dataset(Vec<Vec<ImageTensor>>),
}

impl ReferenceSource {
    fn pick(&self, i: usize, label: usize) -> Option<ImageTensor> {
        match self {
            ReferenceSource::None => None,
            ReferenceSource::Fixed(img) => Some(img.clone()),
            ReferenceSource::Dataset(by_class) => {
                let pool = &by_class[label];
                Some(pool[(i / by_class.len()) % pool.len()].clone())
            }
        }
    }
}

/// Runs `cfg.attack.count` attacks and writes artifacts under `base`
/// (subdirectories `images/`, `baseline/`, `records/`, `masks/`).
/// Relative paths in `written` are relative to `base`.
pub fn execute_batch(
    cfg: &Config,
    guidance: &GuidanceConfig,
    models: &LoadedModels,
    reference: &ReferenceSource,
    target_image: Option<&ImageTensor>,
    base: &Path,
) -> Result<BatchOutcome> {
    let t0 = Instant::now();
    let classes = models.classes;
    let surrogate = models.classifier(&cfg.attack.surrogate)?;

    let recognition = target_image.is_some();
    let attack_models = AttackModels {
        schedule: &models.schedule,
        diffusion: &models.unet,
        classifier: if recognition { None } else { Some(surrogate) },
        embedder: if recognition {
            Some(&models.embedder)
        } else {
            None
        },
        saliency_model: Some(surrogate),
    };

    let mut instances = Vec::with_capacity(cfg.attack.count);
    for i in 0..cfg.attack.count {
        let (label, target_class) = instance_classes(i, classes);
        let target = match target_image {
            Some(img) => AttackTarget::TargetImage(img.clone()),
            None => AttackTarget::Label(target_class),
        };
        instances.push(AttackInstance {
            label,
            target,
            reference: reference.pick(i, label),
        });
    }

    let has_reference = !matches!(reference, ReferenceSource::None);
    let options = AttackOptions {
        early_stop: cfg.attack.early_stop,
        grad_at_mean: cfg.attack.grad_at_mean,
        chain_x0_factor: cfg.attack.chain_x0_factor,
        fuse_before_guidance: cfg.attack.fuse_before_guidance,
        similarity_threshold: cfg.attack.similarity_threshold,
        saliency: if has_reference {
            Some(cfg.attack.saliency_settings())
        } else {
            None
        },
        ..AttackOptions::default()
    };

    let results = run_attack_batch(&attack_models, &instances, guidance, &options, cfg.attack.workers)?;

    subdir(base, "images")?;
    subdir(base, "baseline")?;
    subdir(base, "records")?;
    if has_reference {
        subdir(base, "masks")?;
    }

    let mut written = Vec::new();
    let mut adversarial = Vec::with_capacity(results.len());
    let mut baselines = Vec::with_capacity(results.len());
    let mut mask_bounds: Option<(f64, f64)> = None;

    for (i, (inst, res)) in instances.iter().zip(&results).enumerate() {
        let img_rel = format!("images/attack_{i:04}.png");
        save_gray(&base.join(&img_rel), &res.final_image)?;
        written.push(img_rel.clone());
        adversarial.push(res.final_image.clone());

        let mut r = stream(child_seed(guidance.seed, i as u64));
        let baseline = sample_class(
            &models.unet,
            &models.schedule,
            inst.label,
            guidance.class_scale,
            &mut r,
        )?;
        let base_rel = format!("baseline/baseline_{i:04}.png");
        save_gray(&base.join(&base_rel), &baseline)?;
        written.push(base_rel.clone());
        baselines.push(baseline);

        let mask_rel = if let Some(map) = &res.saliency {
            let png_rel = format!("masks/mask_{i:04}.png");
            let json_rel = format!("masks/mask_{i:04}.json");
            save_map(&base.join(&png_rel), map.map())?;
            let record = MaskRecord {
                method: map.method,
                layer: map.layer.clone(),
                class: map.class,
                norm_min: map.norm_min,
                norm_max: map.norm_max,
                forward_calls: map.forward_calls,
                gradient_calls: map.gradient_calls,
                png: png_rel.clone(),
            };
            save_model(&record, &base.join(&json_rel))?;
            written.push(png_rel);
            written.push(json_rel.clone());
            let (mut lo, mut hi) = mask_bounds.unwrap_or((f64::INFINITY, f64::NEG_INFINITY));
            for &v in map.map().iter() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
            mask_bounds = Some((lo, hi));
            Some(json_rel)
        } else {
            None
        };

        let target_class = match &inst.target {
            AttackTarget::Label(c) => Some(*c),
            AttackTarget::TargetImage(_) => None,
        };
        let record = AttackRecord {
            index: i,
            label: inst.label,
            target_class,
            seed: child_seed(guidance.seed, i as u64),
            success: res.success,
            success_per_cycle: res.success_per_cycle.clone(),
            final_prediction: res.final_prediction,
            final_similarity: res.final_similarity,
            steps_run: res.steps_run,
            denoiser_calls: res.denoiser_calls,
            gradient_calls: res.gradient_calls,
            model_forward_calls: res.model_forward_calls,
            image: img_rel,
            baseline: base_rel,
            mask: mask_rel,
        };
        let rec_rel = format!("records/attack_{i:04}.json");
        save_model(&record, &base.join(&rec_rel))?;
        written.push(rec_rel);
    }

    let asr = attack_success_rate(results.iter().map(|r| r.success))?;
    Ok(BatchOutcome {
        results,
        adversarial,
        baselines,
        asr,
        mask_bounds,
        written,
        wall_time_s: t0.elapsed().as_secs_f64(),
    })
}

/// Resolves the configured reference into a source of per-attack references.
pub fn reference_from_config(cfg: &Config) -> Result<ReferenceSource> {
    match &cfg.attack.reference {
        None => Ok(ReferenceSource::None),
        Some(path) => Ok(ReferenceSource::Fixed(load_gray(Path::new(path))?)),
    }
}

pub fn run(cfg: &Config, models: &LoadedModels) -> Result<PathBuf> {
    cfg.validate()?;
    let guidance = resolve_guidance(cfg, models)?;
    let reference = reference_from_config(cfg)?;
    let target_image = match &cfg.attack.target_image {
        Some(path) => Some(load_gray(Path::new(path))?),
        None => None,
    };

    let tag = cfg.output.tag.clone().unwrap_or_else(|| "attack".to_string());
    let run = create_run_dir(&cfg.output.root, &tag)?;
    let outcome = execute_batch(cfg, &guidance, models, &reference, target_image.as_ref(), &run)?;

    let mut manifest = Manifest::new("attack", cfg);
    manifest.guidance = guidance;
    manifest.schedule = models.schedule_spec;
    manifest.dataset_checksum = models.dataset_checksum.clone();
    manifest.models_dir = Some(models.dir.display().to_string());
    manifest.model_checksums = models.checksums.clone();
    manifest.wall_time_s = outcome.wall_time_s;
    for rel in &outcome.written {
        manifest.record(&run, rel)?;
    }
    manifest.save(&run)?;

    println!("attack run: {}", run.display());
    println!(
        "attacks {} asr {:.3} denoiser_calls {} gradient_calls {}",
        outcome.results.len(),
        outcome.asr,
        outcome.results.iter().map(|r| r.denoiser_calls).sum::<usize>(),
        outcome.results.iter().map(|r| r.gradient_calls).sum::<usize>(),
    );
    Ok(run)
}

/// Attacks always run under the schedule the denoiser was trained with.
/// A config that names a different, non-default schedule is an error.
pub fn resolve_guidance(cfg: &Config, models: &LoadedModels) -> Result<GuidanceConfig> {
    let configured = cfg.schedule.spec();
    let default = crate::config::ScheduleSection::default().spec();
    if configured != models.schedule_spec && configured != default {
        return Err(Error::parameter(format!(
            "config schedule has {} steps but the models were trained for {}",
            configured.steps, models.schedule_spec.steps
        )));
    }
    let steps = models.schedule_spec.steps;
    let g = GuidanceConfig {
        steps,
        adv_window: cfg.guidance.adv_window.unwrap_or(steps),
        cycles: cfg.guidance.cycles,
        adv_scale: cfg.guidance.adv_scale,
        class_scale: cfg.guidance.class_scale,
        noise_scale: cfg.guidance.noise_scale,
        seed: cfg.guidance.seed,
    };
    g.validate()?;
    Ok(g)
}
