//! The full attack loop: guided reverse sampling, saliency-masked reference
//! fusion, and initial-noise optimization across cycles.
//!
//! One attack consumes exactly one random stream, drawn in a fixed order
//! (initial noise, then per step the transition noise followed by the
//! reference noise), so every result is reproducible from `config.seed`
//! alone and batches can run on any number of worker threads.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::time::Instant;

use crate::diffusion::{
    predict_noise_cfg, predict_x0, reverse_mean, reverse_step, DiffusionModelAdapter,
};
use crate::error::{Error, Result};
use crate::guidance::{
    apply_adversarial_guidance, classification_log_prob_grad, pixel_grad_to_diffusion,
    recognition_log_prob_grad, AttackTarget, GuidanceConfig, LogProbGradient,
    RecognitionSurrogate,
};
use crate::inpaint::{fuse, noisy_reference};
use crate::models::{SimilarityModelAdapter, TargetModelAdapter};
use crate::noise_opt::optimize_initial_noise;
use crate::rng;
use crate::saliency::{compute_saliency, SaliencyMap, SaliencySettings};
use crate::schedule::NoiseSchedule;
use crate::tensor::{ImageTensor, ValueRange};

/// Everything an attack borrows: the schedule plus the model adapters.
pub struct AttackModels<'a> {
    pub schedule: &'a NoiseSchedule,
    pub diffusion: &'a dyn DiffusionModelAdapter,
    /// Victim classifier; required for [`AttackTarget::Label`].
    pub classifier: Option<&'a dyn TargetModelAdapter>,
    /// Victim embedder; required for [`AttackTarget::TargetImage`].
    pub embedder: Option<&'a dyn SimilarityModelAdapter>,
    /// Model whose activations drive the saliency mask; the classifier
    /// doubles as this when absent.
    pub saliency_model: Option<&'a dyn TargetModelAdapter>,
}

/// One attack to run: what to generate and what to push it toward.
#[derive(Clone, Debug)]
pub struct AttackInstance {
    /// Class label conditioning the denoiser (what the image should depict).
    pub label: usize,
    /// Adversarial objective.
    pub target: AttackTarget,
    /// Pixel-range reference image for masked fusion; `None` disables it.
    pub reference: Option<ImageTensor>,
}

/// Behavioral switches that are not scalar strengths.
#[derive(Clone, Debug)]
pub struct AttackOptions {
    /// Stop at the first successful cycle instead of running all of them.
    pub early_stop: bool,
    /// Evaluate the label gradient at the step mean instead of the sampled
    /// state.
    pub grad_at_mean: bool,
    /// Multiply similarity-target gradients by `1/sqrt(alpha_bar[t])`, the
    /// chain factor of the clean-image estimate. Off by default: the factor
    /// explodes at early steps.
    pub chain_x0_factor: bool,
    /// Fuse the reference before applying guidance within a step, so the
    /// gradient sees the fused state.
    pub fuse_before_guidance: bool,
    /// Similarity at or above this counts as success for image targets.
    pub similarity_threshold: f64,
    /// Surrogate log-likelihood for similarity targets.
    pub surrogate: RecognitionSurrogate,
    /// Compute the fusion mask with this saliency configuration.
    pub saliency: Option<SaliencySettings>,
    /// Use this `[height, width]` mask directly; takes precedence over
    /// `saliency`.
    pub explicit_mask: Option<Array2<f64>>,
}

impl Default for AttackOptions {
    fn default() -> Self {
        AttackOptions {
            early_stop: false,
            grad_at_mean: false,
            chain_x0_factor: false,
            fuse_before_guidance: false,
            similarity_threshold: 0.7,
            surrogate: RecognitionSurrogate::default(),
            saliency: None,
            explicit_mask: None,
        }
    }
}

/// Verdict of one victim-model evaluation of a candidate image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SuccessCheck {
    pub success: bool,
    /// Classifier argmax, for label targets.
    pub prediction: Option<usize>,
    /// Embedding similarity, for image targets.
    pub similarity: Option<f64>,
}

/// Evaluates a pixel-range image against the attack target.
pub fn success_check(
    target: &AttackTarget,
    image: &ImageTensor,
    classifier: Option<&dyn TargetModelAdapter>,
    embedder: Option<&dyn SimilarityModelAdapter>,
    similarity_threshold: f64,
) -> Result<SuccessCheck> {
    image.check_range(ValueRange::Pixel)?;
    match target {
        AttackTarget::Label(class) => {
            let model = classifier
                .ok_or_else(|| Error::parameter("label target needs a classifier"))?;
            let prediction = model.predict(image)?;
            Ok(SuccessCheck {
                success: prediction == *class,
                prediction: Some(prediction),
                similarity: None,
            })
        }
        AttackTarget::TargetImage(reference) => {
            let model = embedder
                .ok_or_else(|| Error::parameter("image target needs an embedder"))?;
            let a = model.embed(image)?;
            let b = model.embed(reference)?;
            let similarity = model.similarity(&a, &b);
            Ok(SuccessCheck {
                success: similarity >= similarity_threshold,
                prediction: None,
                similarity: Some(similarity),
            })
        }
    }
}

/// Output of one attack.
#[derive(Clone, Debug)]
pub struct AttackResult {
    /// Pixel-range image of the last successful cycle, or of the last cycle
    /// if none succeeded.
    pub final_image: ImageTensor,
    /// Pixel-range images of every successful cycle, in order.
    pub accepted_images: Vec<ImageTensor>,
    pub success_per_cycle: Vec<bool>,
    /// Whether any cycle succeeded.
    pub success: bool,
    /// Check outcome on `final_image`'s cycle.
    pub final_prediction: Option<usize>,
    pub final_similarity: Option<f64>,
    /// Reverse steps executed across all cycles.
    pub steps_run: usize,
    /// Denoiser evaluations; two per reverse step.
    pub denoiser_calls: usize,
    /// Adversarial-guidance plus noise-optimization gradient evaluations.
    /// Saliency gradient costs live on the mask record instead.
    pub gradient_calls: usize,
    /// Success checks, plus the mask's class prediction and forward passes
    /// when a saliency mask was computed.
    pub model_forward_calls: usize,
    pub config: GuidanceConfig,
    pub wall_time_s: f64,
    /// Mask provenance when the mask came from a saliency method.
    pub saliency: Option<SaliencyMap>,
}

/// Target log-likelihood gradient in diffusion-range coordinates, shared by
/// the guided sampler and the initial-noise optimizer.
struct DiffusionObjective<'a> {
    target: &'a AttackTarget,
    classifier: Option<&'a dyn TargetModelAdapter>,
    embedder: Option<&'a dyn SimilarityModelAdapter>,
    surrogate: RecognitionSurrogate,
}

impl LogProbGradient for DiffusionObjective<'_> {
    fn grad_log_prob(&self, x: &ImageTensor) -> Result<ImageTensor> {
        let x_pix = x.to_pixel()?;
        let g_pix = match self.target {
            AttackTarget::Label(class) => {
                let model = self
                    .classifier
                    .ok_or_else(|| Error::parameter("label target needs a classifier"))?;
                classification_log_prob_grad(model, &x_pix, *class)?
            }
            AttackTarget::TargetImage(reference) => {
                let model = self
                    .embedder
                    .ok_or_else(|| Error::parameter("image target needs an embedder"))?;
                recognition_log_prob_grad(model, &x_pix, reference, self.surrogate)?
            }
        };
        pixel_grad_to_diffusion(&g_pix)
    }
}

fn validate_attack(
    models: &AttackModels,
    instance: &AttackInstance,
    config: &GuidanceConfig,
    options: &AttackOptions,
) -> Result<()> {
    config.validate()?;
    if config.steps != models.schedule.steps() {
        return Err(Error::parameter(format!(
            "config has {} steps but the schedule has {}",
            config.steps,
            models.schedule.steps()
        )));
    }
    let shape = models.diffusion.shape();
    if instance.label >= models.diffusion.class_count() {
        return Err(Error::parameter(format!(
            "label {} outside the denoiser's 0..{}",
            instance.label,
            models.diffusion.class_count()
        )));
    }
    if !models.diffusion.supports_unconditional() {
        return Err(Error::capability(
            "guided sampling needs a denoiser with an unconditional branch",
        ));
    }
    match &instance.target {
        AttackTarget::Label(class) => {
            let model = models
                .classifier
                .ok_or_else(|| Error::parameter("label target needs a classifier"))?;
            if *class >= model.class_count() {
                return Err(Error::parameter(format!(
                    "target class {} outside the classifier's 0..{}",
                    class,
                    model.class_count()
                )));
            }
            if model.input_shape() != shape {
                return Err(Error::shape("classifier and denoiser shapes differ"));
            }
        }
        AttackTarget::TargetImage(reference) => {
            let model = models
                .embedder
                .ok_or_else(|| Error::parameter("image target needs an embedder"))?;
            reference.check_range(ValueRange::Pixel)?;
            if reference.shape() != shape || model.input_shape() != shape {
                return Err(Error::shape("target image and denoiser shapes differ"));
            }
        }
    }
    if let Some(reference) = &instance.reference {
        reference.check_range(ValueRange::Pixel)?;
        if reference.shape() != shape {
            return Err(Error::shape("reference and denoiser shapes differ"));
        }
    } else if options.saliency.is_some() || options.explicit_mask.is_some() {
        return Err(Error::parameter(
            "a fusion mask was configured but no reference image given",
        ));
    }
    if let Some(mask) = &options.explicit_mask {
        if mask.nrows() != shape.1 || mask.ncols() != shape.2 {
            return Err(Error::shape(format!(
                "explicit mask is {}x{}, image is {}x{}",
                mask.nrows(),
                mask.ncols(),
                shape.1,
                shape.2
            )));
        }
    }
    Ok(())
}

/// Runs one complete attack.
///
/// Per cycle, the reverse chain runs from pure noise (or from the previous
/// cycle's re-diffused output) to a clean image; during the final
/// `adv_window` steps each transition mean is shifted by the scaled target
/// gradient, and when a reference is present the masked region is replaced
/// by the matched-noise-level reference after (or, optionally, before) the
/// shift. The finished image is checked against the target once per cycle.
pub fn score_adv_attack(
    models: &AttackModels,
    instance: &AttackInstance,
    config: &GuidanceConfig,
    options: &AttackOptions,
) -> Result<AttackResult> {
    let start = Instant::now();
    validate_attack(models, instance, config, options)?;
    let schedule = models.schedule;
    let shape = models.diffusion.shape();
    let mut rng = rng::stream(config.seed);

    let mut denoiser_calls = 0usize;
    let mut gradient_calls = 0usize;
    let mut model_forward_calls = 0usize;
    let mut steps_run = 0usize;

    // The mask is computed once per attack, on the clean reference.
    let mut saliency_record: Option<SaliencyMap> = None;
    let mask_plane: Option<Array2<f64>> = if let Some(reference) = &instance.reference {
        if let Some(mask) = &options.explicit_mask {
            Some(mask.clone())
        } else if let Some(settings) = &options.saliency {
            let model = models.saliency_model.or(models.classifier).ok_or_else(|| {
                Error::parameter("saliency mask needs a saliency model or classifier")
            })?;
            let class = model.predict(reference)?;
            let map = compute_saliency(model, reference, class, settings)?;
            model_forward_calls += 1 + map.forward_calls;
            let plane = map.map().clone();
            saliency_record = Some(map);
            Some(plane)
        } else {
            None
        }
    } else {
        None
    };
    let reference_diffusion: Option<ImageTensor> = match &instance.reference {
        Some(r) if mask_plane.is_some() => Some(r.to_diffusion()?),
        _ => None,
    };

    let objective = DiffusionObjective {
        target: &instance.target,
        classifier: models.classifier,
        embedder: models.embedder,
        surrogate: options.surrogate,
    };

    let mut success_per_cycle = Vec::with_capacity(config.cycles);
    let mut accepted_images = Vec::new();
    let mut chosen: Option<(ImageTensor, SuccessCheck)> = None;
    let mut last: Option<(ImageTensor, SuccessCheck)> = None;
    let mut prev_x0: Option<ImageTensor> = None;

    for cycle in 0..config.cycles {
        let mut x = match &prev_x0 {
            None => ImageTensor::new(rng::normal_array(shape, &mut rng), ValueRange::Diffusion),
            Some(x0) => {
                let next = optimize_initial_noise(
                    x0,
                    schedule,
                    config.noise_scale,
                    &objective,
                    &mut rng,
                )
                .map_err(|e| e.at_step(cycle, schedule.steps()))?;
                if config.noise_scale > 0.0 {
                    gradient_calls += 1;
                }
                next
            }
        };

        for t in (1..=schedule.steps()).rev() {
            let eps = predict_noise_cfg(models.diffusion, &x, t, instance.label, config.class_scale)
                .map_err(|e| e.at_step(cycle, t))?;
            denoiser_calls += 2;
            let mean = reverse_mean(&x, &eps, t, schedule).map_err(|e| e.at_step(cycle, t))?;
            let mut x_bar = if t > 1 {
                let z =
                    ImageTensor::new(rng::normal_array(shape, &mut rng), ValueRange::Diffusion);
                mean.add_scaled(&z, schedule.sigma(t)?)
                    .map_err(|e| e.at_step(cycle, t))?
            } else {
                mean.clone()
            };

            if options.fuse_before_guidance {
                if let (Some(mask), Some(xref)) = (&mask_plane, &reference_diffusion) {
                    let ref_noisy = noisy_reference(xref, t - 1, schedule, &mut rng)
                        .map_err(|e| e.at_step(cycle, t))?;
                    x_bar = fuse(&x_bar, &ref_noisy, mask).map_err(|e| e.at_step(cycle, t))?;
                }
            }

            if config.adv_scale > 0.0 && t <= config.adv_window {
                let grad = match &instance.target {
                    AttackTarget::Label(class) => {
                        let point = if options.grad_at_mean { &mean } else { &x_bar };
                        let x_pix = point.to_pixel().map_err(|e| e.at_step(cycle, t))?;
                        let model = models.classifier.expect("validated");
                        let g_pix = classification_log_prob_grad(model, &x_pix, *class)
                            .map_err(|e| e.at_step(cycle, t))?;
                        gradient_calls += 1;
                        pixel_grad_to_diffusion(&g_pix)?
                    }
                    AttackTarget::TargetImage(target_image) => {
                        let x0_hat =
                            predict_x0(&x, &eps, t, schedule).map_err(|e| e.at_step(cycle, t))?;
                        let x_pix = x0_hat.to_pixel().map_err(|e| e.at_step(cycle, t))?;
                        let model = models.embedder.expect("validated");
                        let g_pix =
                            recognition_log_prob_grad(model, &x_pix, target_image, options.surrogate)
                                .map_err(|e| e.at_step(cycle, t))?;
                        gradient_calls += 1;
                        let g = pixel_grad_to_diffusion(&g_pix)?;
                        if options.chain_x0_factor {
                            let factor = 1.0 / schedule.alpha_bar(t)?.sqrt();
                            g.map(|v| factor * v)
                        } else {
                            g
                        }
                    }
                };
                x_bar = apply_adversarial_guidance(&x_bar, &grad, schedule.sigma(t)?, config.adv_scale)
                    .map_err(|e| e.at_step(cycle, t))?;
            }

            if !options.fuse_before_guidance {
                if let (Some(mask), Some(xref)) = (&mask_plane, &reference_diffusion) {
                    let ref_noisy = noisy_reference(xref, t - 1, schedule, &mut rng)
                        .map_err(|e| e.at_step(cycle, t))?;
                    x_bar = fuse(&x_bar, &ref_noisy, mask).map_err(|e| e.at_step(cycle, t))?;
                }
            }

            x = x_bar;
            steps_run += 1;
        }

        let x0 = x.clamp_diffusion()?;
        let image = x0.to_pixel()?;
        let check = success_check(
            &instance.target,
            &image,
            models.classifier,
            models.embedder,
            options.similarity_threshold,
        )
        .map_err(|e| e.at_step(cycle, 0))?;
        model_forward_calls += 1;
        success_per_cycle.push(check.success);
        if check.success {
            accepted_images.push(image.clone());
            chosen = Some((image.clone(), check));
        }
        last = Some((image, check));
        prev_x0 = Some(x0);
        if check.success && options.early_stop {
            break;
        }
    }

    let (final_image, final_check) = chosen.or(last).expect("cycles >= 1");
    Ok(AttackResult {
        final_image,
        accepted_images,
        success: success_per_cycle.iter().any(|&s| s),
        success_per_cycle,
        final_prediction: final_check.prediction,
        final_similarity: final_check.similarity,
        steps_run,
        denoiser_calls,
        gradient_calls,
        model_forward_calls,
        config: *config,
        wall_time_s: start.elapsed().as_secs_f64(),
        saliency: saliency_record,
    })
}

/// Unguided class-conditional sample, for realism baselines.
pub fn sample_class(
    diffusion: &dyn DiffusionModelAdapter,
    schedule: &NoiseSchedule,
    label: usize,
    class_scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ImageTensor> {
    if label >= diffusion.class_count() {
        return Err(Error::parameter(format!(
            "label {} outside 0..{}",
            label,
            diffusion.class_count()
        )));
    }
    let mut x = ImageTensor::new(
        rng::normal_array(diffusion.shape(), rng),
        ValueRange::Diffusion,
    );
    for t in (1..=schedule.steps()).rev() {
        let eps = predict_noise_cfg(diffusion, &x, t, label, class_scale)?;
        x = reverse_step(&x, &eps, t, schedule, rng)?;
    }
    x.clamp_diffusion()?.to_pixel()
}

/// Runs a batch of attacks, instance `i` seeded with
/// `child_seed(config.seed, i)`, so results do not depend on `workers`.
/// Results come back in instance order.
pub fn run_attack_batch(
    models: &AttackModels,
    instances: &[AttackInstance],
    config: &GuidanceConfig,
    options: &AttackOptions,
    workers: usize,
) -> Result<Vec<AttackResult>> {
    let run_one = |pair: (usize, &AttackInstance)| -> Result<AttackResult> {
        let (index, instance) = pair;
        let cfg = GuidanceConfig {
            seed: rng::child_seed(config.seed, index as u64),
            ..*config
        };
        score_adv_attack(models, instance, &cfg, options)
    };
    if workers <= 1 {
        return instances.iter().enumerate().map(run_one).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::parameter(format!("worker pool: {e}")))?;
    pool.install(|| {
        instances
            .par_iter()
            .enumerate()
            .map(run_one)
            .collect::<Result<Vec<_>>>()
    })
}
