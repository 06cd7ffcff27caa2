//! Forward and reverse diffusion primitives.
//!
//! All operations work on diffusion-range tensors and a shared
//! [`NoiseSchedule`]. The reverse step follows the standard DDPM
//! parameterization: the model predicts the noise `eps` that produced `x_t`,
//! and the step mean is recovered from it.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::schedule::NoiseSchedule;
use crate::tensor::{ImageTensor, ValueRange};

/// A noise-prediction model `eps(x_t, t, label)`.
///
/// `label = None` requests the unconditional branch; adapters that were
/// never trained unconditionally must report it via
/// [`supports_unconditional`](DiffusionModelAdapter::supports_unconditional)
/// and error on `None`.
pub trait DiffusionModelAdapter: Sync {
    fn predict_noise(&self, x_t: &ImageTensor, t: usize, label: Option<usize>) -> Result<ImageTensor>;

    /// `(channels, height, width)` this model operates on.
    fn shape(&self) -> (usize, usize, usize);

    fn class_count(&self) -> usize;

    fn supports_unconditional(&self) -> bool;
}

fn check_diffusion_input(x: &ImageTensor) -> Result<()> {
    x.check_range(ValueRange::Diffusion)
}

/// Samples `x_t ~ q(x_t | x_0)` under the forward marginal
/// `x_t = sqrt(alpha_bar[t]) x_0 + sqrt(1 - alpha_bar[t]) eps`.
///
/// `t = 0` returns `x_0` unchanged and consumes no randomness.
pub fn forward_diffuse(
    x0: &ImageTensor,
    t: usize,
    schedule: &NoiseSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<ImageTensor> {
    if t == 0 {
        schedule.alpha_bar(0)?;
        check_diffusion_input(x0)?;
        return Ok(x0.clone());
    }
    let eps = ImageTensor::new(rng::normal_array(x0.shape(), rng), ValueRange::Diffusion);
    forward_diffuse_with(x0, t, schedule, &eps)
}

/// Deterministic forward marginal with caller-supplied noise.
pub fn forward_diffuse_with(
    x0: &ImageTensor,
    t: usize,
    schedule: &NoiseSchedule,
    eps: &ImageTensor,
) -> Result<ImageTensor> {
    check_diffusion_input(x0)?;
    let ab = schedule.alpha_bar(t)?;
    if t == 0 {
        return Ok(x0.clone());
    }
    x0.linear_comb(ab.sqrt(), eps, (1.0 - ab).sqrt())
}

/// Classifier-free-guided noise prediction:
/// `(1 + s_c) * eps(x_t, t, y) - s_c * eps(x_t, t, None)`.
///
/// Always makes exactly two adapter calls. At `class_scale = 0` the result
/// is bit-identical to the conditional prediction because the unconditional
/// term is multiplied by exactly zero.
pub fn predict_noise_cfg(
    model: &dyn DiffusionModelAdapter,
    x_t: &ImageTensor,
    t: usize,
    label: usize,
    class_scale: f64,
) -> Result<ImageTensor> {
    if !class_scale.is_finite() || class_scale < 0.0 {
        return Err(Error::parameter(format!(
            "class_scale must be finite and >= 0, got {class_scale}"
        )));
    }
    check_diffusion_input(x_t)?;
    let cond = model.predict_noise(x_t, t, Some(label))?;
    let uncond = model.predict_noise(x_t, t, None)?;
    cond.linear_comb(1.0 + class_scale, &uncond, -class_scale)
}

/// Mean of the reverse transition:
/// `mu = (x_t - (1 - alpha[t]) / sqrt(1 - alpha_bar[t]) * eps) / sqrt(alpha[t])`.
pub fn reverse_mean(
    x_t: &ImageTensor,
    eps: &ImageTensor,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<ImageTensor> {
    check_diffusion_input(x_t)?;
    let alpha = schedule.alpha(t)?;
    let ab = schedule.alpha_bar(t)?;
    let coef = (1.0 - alpha) / (1.0 - ab).sqrt();
    let inv_sqrt_alpha = 1.0 / alpha.sqrt();
    x_t.linear_comb(inv_sqrt_alpha, eps, -inv_sqrt_alpha * coef)
}

/// One unguided reverse step: `x_{t-1} = mu + sigma[t] * z`.
///
/// At `t = 1` the step is deterministic and consumes no randomness.
pub fn reverse_step(
    x_t: &ImageTensor,
    eps: &ImageTensor,
    t: usize,
    schedule: &NoiseSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<ImageTensor> {
    let mean = reverse_mean(x_t, eps, t, schedule)?;
    if t == 1 {
        return Ok(mean);
    }
    let sigma = schedule.sigma(t)?;
    let z = ImageTensor::new(rng::normal_array(mean.shape(), rng), ValueRange::Diffusion);
    mean.add_scaled(&z, sigma)
}

/// Inverts the forward marginal at matched index `t`:
/// `x0_hat = (x_t - sqrt(1 - alpha_bar[t]) * eps) / sqrt(alpha_bar[t])`.
///
/// Pure formula; no clamping.
pub fn predict_x0(
    x_t: &ImageTensor,
    eps: &ImageTensor,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<ImageTensor> {
    check_diffusion_input(x_t)?;
    let ab = schedule.alpha_bar(t)?;
    if t == 0 {
        return Err(Error::parameter("predict_x0 needs t >= 1"));
    }
    let inv = 1.0 / ab.sqrt();
    x_t.linear_comb(inv, eps, -inv * (1.0 - ab).sqrt())
}
