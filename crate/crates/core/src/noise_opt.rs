//! Initial-noise optimization between sampling cycles.
//!
//! After a cycle produces `x_0`, the next cycle's starting point is not a
//! fresh draw: the generated image is pushed back to the deepest noise level
//! through the forward marginal, then shifted along the target
//! log-likelihood gradient at `x_0`, scaled by the terminal variance.

use rand_chacha::ChaCha8Rng;

use crate::diffusion::forward_diffuse;
use crate::error::{Error, Result};
use crate::guidance::LogProbGradient;
use crate::schedule::NoiseSchedule;
use crate::tensor::{ImageTensor, ValueRange};

/// Computes the next cycle's starting noise:
/// `x_T = (sqrt(alpha_bar[T]) x_0 + sqrt(1 - alpha_bar[T]) eps)
///        + terminal_sigma^2 * noise_scale * grad_log_prob(x_0)`.
///
/// `x_0` is the diffusion-range generated image. With `noise_scale = 0` the
/// objective is never queried and the result is the plain forward marginal.
pub fn optimize_initial_noise(
    x0: &ImageTensor,
    schedule: &NoiseSchedule,
    noise_scale: f64,
    objective: &dyn LogProbGradient,
    rng: &mut ChaCha8Rng,
) -> Result<ImageTensor> {
    if !noise_scale.is_finite() || noise_scale < 0.0 {
        return Err(Error::parameter(format!(
            "noise_scale must be finite and >= 0, got {noise_scale}"
        )));
    }
    x0.check_range(ValueRange::Diffusion)?;
    let base = forward_diffuse(x0, schedule.steps(), schedule, rng)?;
    if noise_scale == 0.0 {
        return Ok(base);
    }
    let grad = objective.grad_log_prob(x0)?;
    let ts = schedule.terminal_sigma();
    base.add_scaled(&grad, ts * ts * noise_scale)
}
