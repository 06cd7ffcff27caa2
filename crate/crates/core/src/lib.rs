//! Core library for diffusion-guided unrestricted adversarial examples.
//!
//! The crate builds adversarial images by steering a denoising diffusion
//! sampler instead of perturbing pixels under a norm ball. Three mechanisms
//! combine:
//!
//! * per-step adversarial guidance of the reverse process ([`guidance`]),
//! * saliency-masked blending with a reference image ([`saliency`], [`inpaint`]),
//! * optimization of the initial noise between sampling cycles ([`noise_opt`]).
//!
//! [`pipeline`] wires these into a full attack; [`metrics`] scores the
//! results; [`models`] provides the toy victim models and adapter traits.

pub mod diffusion;
pub mod error;
pub mod fd;
pub mod guidance;
pub mod inpaint;
pub mod metrics;
pub mod models;
pub mod noise_opt;
pub mod pipeline;
pub mod rng;
pub mod saliency;
pub mod schedule;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{ImageTensor, ValueRange};
