//! Reference-image fusion for saliency-masked inpainting.
//!
//! At each reverse step the partially denoised state is blended with a
//! matched-noise-level copy of the reference image: the mask selects where
//! the reference survives, everywhere else the guided trajectory continues.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use crate::diffusion::forward_diffuse;
use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;
use crate::tensor::{ImageTensor, ValueRange};

/// Samples the reference image at noise level `t`:
/// `x_ref_t ~ N(sqrt(alpha_bar[t]) x_ref, (1 - alpha_bar[t]) I)`.
///
/// `t = 0` returns the reference unchanged and consumes no randomness.
pub fn noisy_reference(
    x_ref: &ImageTensor,
    t: usize,
    schedule: &NoiseSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<ImageTensor> {
    x_ref.check_range(ValueRange::Diffusion)?;
    forward_diffuse(x_ref, t, schedule, rng)
}

/// Blends `x_guided * (1 - mask) + x_ref_noisy * mask` per pixel.
///
/// The mask is `[height, width]`, broadcast over channels, with every value
/// in `[0, 1]`. A zero mask returns the guided state bit-identically; a unit
/// mask returns the noisy reference bit-identically.
pub fn fuse(
    x_guided: &ImageTensor,
    x_ref_noisy: &ImageTensor,
    mask: &Array2<f64>,
) -> Result<ImageTensor> {
    x_guided.check_compatible(x_ref_noisy)?;
    let (c, h, w) = x_guided.shape();
    if mask.nrows() != h || mask.ncols() != w {
        return Err(Error::shape(format!(
            "mask is {}x{}, image is {}x{}",
            mask.nrows(),
            mask.ncols(),
            h,
            w
        )));
    }
    for &m in mask.iter() {
        if !(0.0..=1.0).contains(&m) {
            return Err(Error::parameter(format!("mask value {m} outside [0, 1]")));
        }
    }
    let mut out = x_guided.clone();
    for ci in 0..c {
        for yi in 0..h {
            for xi in 0..w {
                let m = mask[[yi, xi]];
                if m != 0.0 {
                    let g = x_guided.data()[[ci, yi, xi]];
                    let r = x_ref_noisy.data()[[ci, yi, xi]];
                    out.data_mut()[[ci, yi, xi]] = g * (1.0 - m) + r * m;
                }
            }
        }
    }
    Ok(out)
}
