//! Victim-model adapters and the toy models that implement them.
//!
//! Attack code never touches a concrete network; it goes through
//! [`TargetModelAdapter`] (classification) or [`SimilarityModelAdapter`]
//! (embedding similarity). Adapters advertise optional capabilities
//! (input gradients, activation access) and error cleanly when asked for
//! something they lack, so black-box models still support the
//! gradient-free paths.

pub mod checkpoint;
pub mod classifier;
pub mod dataset;
pub mod denoiser;
pub mod embedder;
pub mod linear;
pub mod nn;
pub mod pgd;

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

/// Stack of feature maps `[channels, height, width]` from one conv layer.
pub type ActivationStack = Array3<f64>;

/// A classification model under attack.
///
/// Inputs are pixel-range tensors. Gradients, where available, are taken
/// with respect to pixel-range inputs.
pub trait TargetModelAdapter: Sync {
    /// Stable identifier used in manifests and transfer matrices.
    fn id(&self) -> &str;

    fn class_count(&self) -> usize;

    fn input_shape(&self) -> (usize, usize, usize);

    /// Raw class scores.
    fn logits(&self, x: &ImageTensor) -> Result<Vec<f64>>;

    /// Log class probabilities; exponentials sum to one.
    fn log_probs(&self, x: &ImageTensor) -> Result<Vec<f64>> {
        Ok(log_softmax(&self.logits(x)?))
    }

    /// Most probable class (smallest index wins ties).
    fn predict(&self, x: &ImageTensor) -> Result<usize> {
        Ok(argmax(&self.logits(x)?))
    }

    fn has_input_gradients(&self) -> bool {
        false
    }

    /// `d log p(class | x) / dx`, a pixel-range-input gradient.
    fn grad_log_prob(&self, _x: &ImageTensor, _class: usize) -> Result<ImageTensor> {
        Err(Error::capability(format!(
            "{}: input gradients not available",
            self.id()
        )))
    }

    fn has_activations(&self) -> bool {
        false
    }

    /// Identifiers of layers whose activations can be read.
    fn activation_layers(&self) -> Vec<String> {
        Vec::new()
    }

    /// Post-nonlinearity feature maps at the named layer.
    fn activations(&self, _x: &ImageTensor, _layer: &str) -> Result<ActivationStack> {
        Err(Error::capability(format!(
            "{}: activations not available",
            self.id()
        )))
    }

    /// `d logit[class] / d activations(layer)`, same shape as the activations.
    fn grad_logit_wrt_activations(
        &self,
        _x: &ImageTensor,
        _class: usize,
        _layer: &str,
    ) -> Result<ActivationStack> {
        Err(Error::capability(format!(
            "{}: activation gradients not available",
            self.id()
        )))
    }
}

/// An embedding model for similarity (recognition-style) attacks.
pub trait SimilarityModelAdapter: Sync {
    fn id(&self) -> &str;

    fn input_shape(&self) -> (usize, usize, usize);

    fn embedding_dim(&self) -> usize;

    /// Embeds a pixel-range image.
    fn embed(&self, x: &ImageTensor) -> Result<Vec<f64>>;

    fn has_input_gradients(&self) -> bool {
        false
    }

    /// Vector-Jacobian product `d (upstream . embed(x)) / dx` with respect to
    /// the pixel-range input.
    fn embed_vjp(&self, _x: &ImageTensor, _upstream: &[f64]) -> Result<ImageTensor> {
        Err(Error::capability(format!(
            "{}: embedding gradients not available",
            self.id()
        )))
    }

    /// Similarity between two embeddings; cosine by default.
    fn similarity(&self, a: &[f64], b: &[f64]) -> f64 {
        cosine(a, b)
    }
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|&v| (v - m).exp()).sum::<f64>().ln() + m;
    logits.iter().map(|&v| v - lse).collect()
}

/// Softmax probabilities.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).iter().map(|&v| v.exp()).collect()
}

/// Index of the largest value; the smallest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Cosine similarity; zero if either vector has (near-)zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na < 1e-12 || nb < 1e-12 {
        return 0.0;
    }
    dot / (na * nb)
}
