//! Analytic reference models.
//!
//! These tiny models have closed-form gradients, so adapter plumbing and
//! guidance math can be tested without training anything.

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::models::{softmax, SimilarityModelAdapter, TargetModelAdapter};
use crate::tensor::{ImageTensor, ValueRange};

/// Softmax over `W . flatten(x)`; gradients are exact.
pub struct LinearSoftmaxModel {
    id: String,
    weights: Array2<f64>,
    shape: (usize, usize, usize),
}

impl LinearSoftmaxModel {
    /// `weights` is `[classes, channels * height * width]`.
    pub fn new(id: impl Into<String>, weights: Array2<f64>, shape: (usize, usize, usize)) -> Result<Self> {
        let dim = shape.0 * shape.1 * shape.2;
        if weights.ncols() != dim {
            return Err(Error::shape(format!(
                "weights have {} columns, input has {} elements",
                weights.ncols(),
                dim
            )));
        }
        Ok(LinearSoftmaxModel {
            id: id.into(),
            weights,
            shape,
        })
    }

    fn flat(&self, x: &ImageTensor) -> Result<Vec<f64>> {
        if x.shape() != self.shape {
            return Err(Error::shape(format!(
                "expected {:?}, got {:?}",
                self.shape,
                x.shape()
            )));
        }
        x.check_range(ValueRange::Pixel)?;
        Ok(x.data().iter().cloned().collect())
    }
}

impl TargetModelAdapter for LinearSoftmaxModel {
    fn id(&self) -> &str {
        &self.id
    }

    fn class_count(&self) -> usize {
        self.weights.nrows()
    }

    fn input_shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    fn logits(&self, x: &ImageTensor) -> Result<Vec<f64>> {
        let v = self.flat(x)?;
        Ok(self
            .weights
            .rows()
            .into_iter()
            .map(|row| row.iter().zip(&v).map(|(w, x)| w * x).sum())
            .collect())
    }

    fn has_input_gradients(&self) -> bool {
        true
    }

    fn grad_log_prob(&self, x: &ImageTensor, class: usize) -> Result<ImageTensor> {
        // d log p_c / dx = W_c - sum_k p_k W_k
        let p = softmax(&self.logits(x)?);
        let dim = self.weights.ncols();
        let mut g = vec![0.0; dim];
        for j in 0..dim {
            let mut acc = self.weights[[class, j]];
            for (k, &pk) in p.iter().enumerate() {
                acc -= pk * self.weights[[k, j]];
            }
            g[j] = acc;
        }
        Ok(ImageTensor::new(
            Array3::from_shape_vec(self.shape, g).expect("dim checked at construction"),
            ValueRange::Pixel,
        ))
    }
}

/// Embeds an image as its own flattened pixels; the Jacobian is the identity.
pub struct IdentityEmbedder {
    id: String,
    shape: (usize, usize, usize),
}

impl IdentityEmbedder {
    pub fn new(id: impl Into<String>, shape: (usize, usize, usize)) -> Self {
        IdentityEmbedder { id: id.into(), shape }
    }
}

impl SimilarityModelAdapter for IdentityEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn input_shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    fn embedding_dim(&self) -> usize {
        self.shape.0 * self.shape.1 * self.shape.2
    }

    fn embed(&self, x: &ImageTensor) -> Result<Vec<f64>> {
        if x.shape() != self.shape {
            return Err(Error::shape(format!(
                "expected {:?}, got {:?}",
                self.shape,
                x.shape()
            )));
        }
        x.check_range(ValueRange::Pixel)?;
        Ok(x.data().iter().cloned().collect())
    }

    fn has_input_gradients(&self) -> bool {
        true
    }

    fn embed_vjp(&self, x: &ImageTensor, upstream: &[f64]) -> Result<ImageTensor> {
        if upstream.len() != self.embedding_dim() {
            return Err(Error::shape(format!(
                "upstream has {} elements, embedding has {}",
                upstream.len(),
                self.embedding_dim()
            )));
        }
        x.check_range(ValueRange::Pixel)?;
        Ok(ImageTensor::new(
            Array3::from_shape_vec(self.shape, upstream.to_vec()).expect("length checked"),
            ValueRange::Pixel,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fd::{finite_diff_grad, grad_relative_error};
    use crate::guidance::{recognition_log_prob, recognition_log_prob_grad, RecognitionSurrogate};
    use crate::rng::{normal_array, stream};
    use approx::assert_relative_eq;

    fn pixel_image(seed: u64, shape: (usize, usize, usize)) -> ImageTensor {
        let mut r = stream(seed);
        ImageTensor::new(
            normal_array(shape, &mut r).mapv(|v| 0.5 + 0.2 * v.tanh()),
            ValueRange::Pixel,
        )
    }

    #[test]
    fn linear_softmax_gradient_matches_finite_differences() {
        let shape = (1, 2, 3);
        let mut r = stream(2);
        let w = Array2::from_shape_fn((4, 6), |_| crate::rng::normal(&mut r));
        let m = LinearSoftmaxModel::new("lin", w, shape).unwrap();
        let x = pixel_image(3, shape);
        for class in 0..4 {
            let analytic = m.grad_log_prob(&x, class).unwrap();
            let f = |t: &ImageTensor| -> Result<f64> { Ok(m.log_probs(t)?[class]) };
            let fd = finite_diff_grad(&f, &x, 1e-6).unwrap();
            assert!(grad_relative_error(&analytic, &fd).unwrap() < 1e-7);
        }
    }

    #[test]
    fn neg_squared_distance_gradient_is_twice_the_residual() {
        let shape = (1, 2, 2);
        let e = IdentityEmbedder::new("ident", shape);
        let x = pixel_image(5, shape);
        let target = pixel_image(6, shape);
        let g = recognition_log_prob_grad(&e, &x, &target, RecognitionSurrogate::NegSquaredDistance)
            .unwrap();
        // d/dx -(x - t)^2 = 2 (t - x): points from the image toward the target.
        for ((gv, xv), tv) in g
            .data()
            .iter()
            .zip(x.data().iter())
            .zip(target.data().iter())
        {
            assert_relative_eq!(*gv, 2.0 * (tv - xv), max_relative = 1e-12);
        }
    }

    #[test]
    fn cosine_surrogate_gradient_matches_finite_differences() {
        let shape = (1, 2, 3);
        let e = IdentityEmbedder::new("ident", shape);
        let x = pixel_image(7, shape);
        let target = pixel_image(8, shape);
        let sur = RecognitionSurrogate::CosineLogProb { kappa: 10.0 };
        let analytic = recognition_log_prob_grad(&e, &x, &target, sur).unwrap();
        let f = |t: &ImageTensor| recognition_log_prob(&e, t, &target, sur);
        let fd = finite_diff_grad(&f, &x, 1e-6).unwrap();
        assert!(grad_relative_error(&analytic, &fd).unwrap() < 1e-7);
    }
}
