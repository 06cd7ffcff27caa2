//! Per-step adversarial guidance of the reverse process.
//!
//! After an unguided reverse step produces `x_bar`, guidance shifts it along
//! the gradient of a target log-likelihood, scaled by the step variance:
//! `x_tilde = x_bar + sigma[t]^2 * adv_scale * grad`. For a Gaussian step and
//! a locally linear log-likelihood this is exactly the posterior mean shift,
//! which [`exact_guided_posterior_oracle`] exposes in closed form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{SimilarityModelAdapter, TargetModelAdapter};
use crate::tensor::{ImageTensor, ValueRange};

/// Scalar knobs of a guided attack.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    /// Total reverse steps `T`.
    pub steps: usize,
    /// Guidance is active only for the final `adv_window` steps.
    pub adv_window: usize,
    /// Number of full reverse passes (noise optimization runs between them).
    pub cycles: usize,
    /// Adversarial guidance scale.
    pub adv_scale: f64,
    /// Classifier-free guidance scale for the denoiser.
    pub class_scale: f64,
    /// Initial-noise optimization scale.
    pub noise_scale: f64,
    /// Base seed for the attack's random stream.
    pub seed: u64,
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::parameter("steps must be >= 1"));
        }
        if self.adv_window > self.steps {
            return Err(Error::parameter(format!(
                "adv_window {} exceeds steps {}",
                self.adv_window, self.steps
            )));
        }
        if self.cycles == 0 {
            return Err(Error::parameter("cycles must be >= 1"));
        }
        for (name, v) in [
            ("adv_scale", self.adv_scale),
            ("class_scale", self.class_scale),
            ("noise_scale", self.noise_scale),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::parameter(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// What the attack drives the image toward.
#[derive(Clone, Debug)]
pub enum AttackTarget {
    /// Make the classifier emit this label.
    Label(usize),
    /// Make the embedder consider the image similar to this pixel-range one.
    TargetImage(ImageTensor),
}

/// Surrogate log-likelihood used for similarity targets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RecognitionSurrogate {
    /// `log p ~ kappa * cos(embed(x), embed(target))`.
    CosineLogProb { kappa: f64 },
    /// `log p ~ -||embed(x) - embed(target)||^2`.
    NegSquaredDistance,
}

impl Default for RecognitionSurrogate {
    fn default() -> Self {
        RecognitionSurrogate::CosineLogProb { kappa: 10.0 }
    }
}

/// A differentiable log-likelihood in diffusion-range coordinates.
///
/// The initial-noise optimizer and the guided sampler both consume this,
/// so chain-rule conventions live in one place (the implementor).
pub trait LogProbGradient: Sync {
    /// `d log p(target | x) / dx` for a diffusion-range `x`.
    fn grad_log_prob(&self, x: &ImageTensor) -> Result<ImageTensor>;
}

/// Applies the guided mean shift `x_bar + sigma^2 * adv_scale * grad`.
///
/// `grad` must be a diffusion-range gradient.
pub fn apply_adversarial_guidance(
    x_bar: &ImageTensor,
    grad: &ImageTensor,
    sigma: f64,
    adv_scale: f64,
) -> Result<ImageTensor> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::parameter(format!("sigma must be >= 0, got {sigma}")));
    }
    if !adv_scale.is_finite() || adv_scale < 0.0 {
        return Err(Error::parameter(format!(
            "adv_scale must be >= 0, got {adv_scale}"
        )));
    }
    x_bar.check_range(ValueRange::Diffusion)?;
    grad.check_range(ValueRange::Diffusion)?;
    x_bar.add_scaled(grad, sigma * sigma * adv_scale)
}

/// Converts a pixel-range input gradient to diffusion-range coordinates.
///
/// The map `pixel = (diffusion + 1) / 2` contributes a factor of `1/2`;
/// the clamp is treated as identity (straight-through).
pub fn pixel_grad_to_diffusion(grad: &ImageTensor) -> Result<ImageTensor> {
    grad.check_range(ValueRange::Pixel)?;
    Ok(ImageTensor::new(
        grad.data().mapv(|v| 0.5 * v),
        ValueRange::Diffusion,
    ))
}

/// `d log p(class | x) / dx` for a pixel-range image, via the adapter.
pub fn classification_log_prob_grad(
    model: &dyn TargetModelAdapter,
    x: &ImageTensor,
    class: usize,
) -> Result<ImageTensor> {
    if class >= model.class_count() {
        return Err(Error::parameter(format!(
            "class {} outside 0..{}",
            class,
            model.class_count()
        )));
    }
    if !model.has_input_gradients() {
        return Err(Error::capability(format!(
            "{}: classification guidance needs input gradients",
            model.id()
        )));
    }
    x.check_range(ValueRange::Pixel)?;
    model.grad_log_prob(x, class)
}

/// Surrogate log-likelihood value for a similarity target.
pub fn recognition_log_prob(
    model: &dyn SimilarityModelAdapter,
    x: &ImageTensor,
    target: &ImageTensor,
    surrogate: RecognitionSurrogate,
) -> Result<f64> {
    x.check_range(ValueRange::Pixel)?;
    target.check_range(ValueRange::Pixel)?;
    let e1 = model.embed(x)?;
    let e2 = model.embed(target)?;
    match surrogate {
        RecognitionSurrogate::CosineLogProb { kappa } => {
            Ok(kappa * crate::models::cosine(&e1, &e2))
        }
        RecognitionSurrogate::NegSquaredDistance => {
            let d2: f64 = e1.iter().zip(&e2).map(|(a, b)| (a - b) * (a - b)).sum();
            Ok(-d2)
        }
    }
}

/// Gradient of the surrogate log-likelihood with respect to `x` (pixel range).
pub fn recognition_log_prob_grad(
    model: &dyn SimilarityModelAdapter,
    x: &ImageTensor,
    target: &ImageTensor,
    surrogate: RecognitionSurrogate,
) -> Result<ImageTensor> {
    if !model.has_input_gradients() {
        return Err(Error::capability(format!(
            "{}: recognition guidance needs embedding gradients",
            model.id()
        )));
    }
    x.check_range(ValueRange::Pixel)?;
    target.check_range(ValueRange::Pixel)?;
    let e1 = model.embed(x)?;
    let e2 = model.embed(target)?;
    let upstream: Vec<f64> = match surrogate {
        RecognitionSurrogate::CosineLogProb { kappa } => {
            // d cos / d e1 = (v - cos * u) / ||e1|| with u, v the unit vectors.
            let n1: f64 = e1.iter().map(|v| v * v).sum::<f64>().sqrt();
            let n2: f64 = e2.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n1 < 1e-12 || n2 < 1e-12 {
                return Err(Error::parameter(
                    "recognition surrogate undefined for zero-norm embeddings",
                ));
            }
            let u: Vec<f64> = e1.iter().map(|v| v / n1).collect();
            let v: Vec<f64> = e2.iter().map(|w| w / n2).collect();
            let cos: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
            u.iter()
                .zip(&v)
                .map(|(ui, vi)| kappa * (vi - cos * ui) / n1)
                .collect()
        }
        RecognitionSurrogate::NegSquaredDistance => {
            e1.iter().zip(&e2).map(|(a, b)| -2.0 * (a - b)).collect()
        }
    };
    model.embed_vjp(x, &upstream)
}

/// Closed-form posterior for a 1-D Gaussian prior `N(mu, sigma^2)` combined
/// with a linear log-likelihood `log p(y|x) = a*x + const`:
/// the posterior is `N(mu + sigma^2 * a, sigma^2)`.
///
/// Returns `(posterior_mean, posterior_sigma)`.
pub fn exact_guided_posterior_oracle(mu: f64, sigma: f64, a: f64) -> Result<(f64, f64)> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::parameter(format!("sigma must be > 0, got {sigma}")));
    }
    if !mu.is_finite() || !a.is_finite() {
        return Err(Error::parameter("mu and a must be finite"));
    }
    Ok((mu + sigma * sigma * a, sigma))
}
