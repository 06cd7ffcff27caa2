//! Toy victim classifiers.
//!
//! Two deliberately different architectures so transfer can be measured:
//!
//! * [`ConvClassifier`] ("conv"): three 3x3 conv blocks, global average
//!   pooling, two dense layers. Exposes conv activations for CAM methods and
//!   its penultimate dense features for the feature-space distance metric.
//! * [`MlpClassifier`] ("mlp"): flatten plus two dense layers. Differentiable
//!   but has no spatial activations, so CAM requests fail by contract.

use ndarray::{Array2, Array4};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::dataset::LabeledImage;
use crate::models::nn::{
    avgpool2_backward, avgpool2_forward, gap_backward, gap_forward, relu2_backward, relu2_forward,
    relu_backward, relu_forward, softmax_ce_loss, AdamParams, Conv3x3, Dense,
};
use crate::models::{ActivationStack, TargetModelAdapter};
use crate::rng::stream;
use crate::tensor::{ImageTensor, ValueRange};

/// Training hyperparameters shared by the toy models.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 8,
            batch_size: 50,
            learning_rate: 2e-3,
            seed: 11,
        }
    }
}

/// Per-epoch mean losses, persisted alongside checkpoints.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
}

/// Converts one pixel-range image into a batch of one.
pub fn to_batch(x: &ImageTensor) -> Result<Array4<f64>> {
    x.check_range(ValueRange::Pixel)?;
    let (c, h, w) = x.shape();
    let mut out = Array4::zeros((1, c, h, w));
    out.index_axis_mut(ndarray::Axis(0), 0).assign(x.data());
    Ok(out)
}

/// Stacks samples into `[batch, C, H, W]` plus their labels.
pub fn stack(samples: &[&LabeledImage]) -> (Array4<f64>, Vec<usize>) {
    let (c, h, w) = samples[0].image.shape();
    let mut x = Array4::zeros((samples.len(), c, h, w));
    let mut labels = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        x.index_axis_mut(ndarray::Axis(0), i).assign(s.image.data());
        labels.push(s.label);
    }
    (x, labels)
}

fn flatten2(x: &Array4<f64>) -> Array2<f64> {
    let (b, c, h, w) = x.dim();
    let mut out = Array2::zeros((b, c * h * w));
    for (i, v) in x.iter().enumerate() {
        out[[i / (c * h * w), i % (c * h * w)]] = *v;
    }
    out
}

fn unflatten2(x: &Array2<f64>, dims: (usize, usize, usize, usize)) -> Array4<f64> {
    let (b, c, h, w) = dims;
    debug_assert_eq!(x.dim(), (b, c * h * w));
    let mut out = Array4::zeros(dims);
    for (i, v) in out.iter_mut().enumerate() {
        *v = x[[i / (c * h * w), i % (c * h * w)]];
    }
    out
}

const CONV_LAYERS: [&str; 3] = ["conv1", "conv2", "conv3"];

/// Conv victim ("model A").
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvClassifier {
    id: String,
    input: (usize, usize, usize),
    classes: usize,
    conv1: Conv3x3,
    conv2: Conv3x3,
    conv3: Conv3x3,
    fc1: Dense,
    fc2: Dense,
}

/// All intermediate states of one conv forward pass.
struct ConvTrace {
    x: Array4<f64>,
    z1: Array4<f64>,
    a1: Array4<f64>,
    p1: Array4<f64>,
    z2: Array4<f64>,
    a2: Array4<f64>,
    p2: Array4<f64>,
    z3: Array4<f64>,
    a3: Array4<f64>,
    g: Array2<f64>,
    z4: Array2<f64>,
    a4: Array2<f64>,
    logits: Array2<f64>,
}

impl ConvClassifier {
    pub fn new(input: (usize, usize, usize), classes: usize, seed: u64) -> Result<Self> {
        let (c, h, w) = input;
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::parameter(
                "conv classifier needs spatial dims divisible by 4",
            ));
        }
        let mut r = stream(seed);
        Ok(ConvClassifier {
            id: "conv".to_string(),
            input,
            classes,
            conv1: Conv3x3::new(c, 8, &mut r),
            conv2: Conv3x3::new(8, 16, &mut r),
            conv3: Conv3x3::new(16, 16, &mut r),
            fc1: Dense::new(16, 32, &mut r),
            fc2: Dense::new(32, classes, &mut r),
        })
    }

    fn forward_trace(&self, x: &Array4<f64>) -> ConvTrace {
        let (z1, _) = self.conv1.forward(x);
        let a1 = relu_forward(&z1);
        let p1 = avgpool2_forward(&a1);
        let (z2, _) = self.conv2.forward(&p1);
        let a2 = relu_forward(&z2);
        let p2 = avgpool2_forward(&a2);
        let (z3, _) = self.conv3.forward(&p2);
        let a3 = relu_forward(&z3);
        let g = gap_forward(&a3);
        let z4 = self.fc1.forward(&g);
        let a4 = relu2_forward(&z4);
        let logits = self.fc2.forward(&a4);
        ConvTrace {
            x: x.clone(),
            z1,
            a1,
            p1,
            z2,
            a2,
            p2,
            z3,
            a3,
            g,
            z4,
            a4,
            logits,
        }
    }

    /// Input gradient for a given logit-space gradient; parameters untouched.
    fn backward_input(&self, tr: &ConvTrace, dlogits: &Array2<f64>) -> Array4<f64> {
        let da4 = self.fc2.backward_data(dlogits);
        let dz4 = relu2_backward(&tr.z4, &da4);
        let dg = self.fc1.backward_data(&dz4);
        let (_, _, h3, w3) = tr.a3.dim();
        let da3 = gap_backward(&dg, h3, w3);
        let dz3 = relu_backward(&tr.z3, &da3);
        let dp2 = self.conv3.backward_data(&dz3, tr.p2.dim());
        let da2 = avgpool2_backward(&dp2);
        let dz2 = relu_backward(&tr.z2, &da2);
        let dp1 = self.conv2.backward_data(&dz2, tr.p1.dim());
        let da1 = avgpool2_backward(&dp1);
        let dz1 = relu_backward(&tr.z1, &da1);
        self.conv1.backward_data(&dz1, tr.x.dim())
    }

    /// Gradient of one logit with respect to the post-ReLU activations of
    /// the named conv layer.
    fn backward_to_layer(&self, tr: &ConvTrace, class: usize, layer: &str) -> Result<Array4<f64>> {
        let mut dlogits = Array2::zeros(tr.logits.raw_dim());
        dlogits[[0, class]] = 1.0;
        let da4 = self.fc2.backward_data(&dlogits);
        let dz4 = relu2_backward(&tr.z4, &da4);
        let dg = self.fc1.backward_data(&dz4);
        let (_, _, h3, w3) = tr.a3.dim();
        let da3 = gap_backward(&dg, h3, w3);
        if layer == "conv3" {
            return Ok(da3);
        }
        let dz3 = relu_backward(&tr.z3, &da3);
        let dp2 = self.conv3.backward_data(&dz3, tr.p2.dim());
        let da2 = avgpool2_backward(&dp2);
        if layer == "conv2" {
            return Ok(da2);
        }
        let dz2 = relu_backward(&tr.z2, &da2);
        let dp1 = self.conv2.backward_data(&dz2, tr.p1.dim());
        let da1 = avgpool2_backward(&dp1);
        if layer == "conv1" {
            return Ok(da1);
        }
        Err(Error::parameter(format!("unknown activation layer {layer}")))
    }

    /// Post-ReLU dense features preceding the final classification layer.
    pub fn penultimate_features(&self, x: &ImageTensor) -> Result<Vec<f64>> {
        let tr = self.forward_trace(&to_batch(x)?);
        Ok(tr.a4.row(0).to_vec())
    }

    /// Trains on the given split, returning per-epoch mean losses.
    pub fn train(&mut self, data: &[LabeledImage], cfg: &TrainConfig) -> Result<TrainReport> {
        if data.is_empty() {
            return Err(Error::parameter("empty training split"));
        }
        let hp = AdamParams {
            lr: cfg.learning_rate,
            ..AdamParams::default()
        };
        let mut rng = stream(cfg.seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut report = TrainReport::default();
        let mut step = 0usize;
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            let mut batches = 0usize;
            for chunk in order.chunks(cfg.batch_size) {
                let samples: Vec<&LabeledImage> = chunk.iter().map(|&i| &data[i]).collect();
                let (x, labels) = stack(&samples);
                let tr = self.forward_trace(&x);
                let (loss, dlogits) = softmax_ce_loss(&tr.logits, &labels);
                epoch_loss += loss;
                batches += 1;

                self.conv1.zero_grad();
                self.conv2.zero_grad();
                self.conv3.zero_grad();
                self.fc1.zero_grad();
                self.fc2.zero_grad();

                let da4 = self.fc2.backward(&tr.a4, &dlogits);
                let dz4 = relu2_backward(&tr.z4, &da4);
                let dg = self.fc1.backward(&tr.g, &dz4);
                let (_, _, h3, w3) = tr.a3.dim();
                let da3 = gap_backward(&dg, h3, w3);
                let dz3 = relu_backward(&tr.z3, &da3);
                // Conv backward needs the im2col context; rebuild it.
                let (_, ctx3) = self.conv3.forward(&tr.p2);
                let dp2 = self.conv3.backward(&ctx3, &dz3);
                let da2 = avgpool2_backward(&dp2);
                let dz2 = relu_backward(&tr.z2, &da2);
                let (_, ctx2) = self.conv2.forward(&tr.p1);
                let dp1 = self.conv2.backward(&ctx2, &dz2);
                let da1 = avgpool2_backward(&dp1);
                let dz1 = relu_backward(&tr.z1, &da1);
                let (_, ctx1) = self.conv1.forward(&tr.x);
                self.conv1.backward(&ctx1, &dz1);

                step += 1;
                self.conv1.step(&hp, step);
                self.conv2.step(&hp, step);
                self.conv3.step(&hp, step);
                self.fc1.step(&hp, step);
                self.fc2.step(&hp, step);
            }
            report.epoch_losses.push(epoch_loss / batches as f64);
        }
        Ok(report)
    }
}

impl TargetModelAdapter for ConvClassifier {
    fn id(&self) -> &str {
        &self.id
    }

    fn class_count(&self) -> usize {
        self.classes
    }

    fn input_shape(&self) -> (usize, usize, usize) {
        self.input
    }

    fn logits(&self, x: &ImageTensor) -> Result<Vec<f64>> {
        let tr = self.forward_trace(&to_batch(x)?);
        Ok(tr.logits.row(0).to_vec())
    }

    fn has_input_gradients(&self) -> bool {
        true
    }

    fn grad_log_prob(&self, x: &ImageTensor, class: usize) -> Result<ImageTensor> {
        if class >= self.classes {
            return Err(Error::parameter(format!(
                "class {class} outside 0..{}",
                self.classes
            )));
        }
        let tr = self.forward_trace(&to_batch(x)?);
        let lp = crate::models::log_softmax(&tr.logits.row(0).to_vec());
        let mut dlogits = Array2::zeros(tr.logits.raw_dim());
        for k in 0..self.classes {
            dlogits[[0, k]] = (if k == class { 1.0 } else { 0.0 }) - lp[k].exp();
        }
        let dx = self.backward_input(&tr, &dlogits);
        Ok(ImageTensor::new(
            dx.index_axis(ndarray::Axis(0), 0).to_owned(),
            ValueRange::Pixel,
        ))
    }

    fn has_activations(&self) -> bool {
        true
    }

    fn activation_layers(&self) -> Vec<String> {
        CONV_LAYERS.iter().map(|s| s.to_string()).collect()
    }

    fn activations(&self, x: &ImageTensor, layer: &str) -> Result<ActivationStack> {
        let tr = self.forward_trace(&to_batch(x)?);
        let a = match layer {
            "conv1" => &tr.a1,
            "conv2" => &tr.a2,
            "conv3" => &tr.a3,
            _ => return Err(Error::parameter(format!("unknown activation layer {layer}"))),
        };
        Ok(a.index_axis(ndarray::Axis(0), 0).to_owned())
    }

    fn grad_logit_wrt_activations(
        &self,
        x: &ImageTensor,
        class: usize,
        layer: &str,
    ) -> Result<ActivationStack> {
        if class >= self.classes {
            return Err(Error::parameter(format!(
                "class {class} outside 0..{}",
                self.classes
            )));
        }
        let tr = self.forward_trace(&to_batch(x)?);
        let da = self.backward_to_layer(&tr, class, layer)?;
        Ok(da.index_axis(ndarray::Axis(0), 0).to_owned())
    }
}

/// Frozen penultimate features double as the desk-FID feature space.
impl crate::metrics::FeatureExtractor for ConvClassifier {
    fn id(&self) -> &str {
        &self.id
    }

    fn feature_dim(&self) -> usize {
        self.fc1.out_f
    }

    fn features(&self, x: &ImageTensor) -> Result<Vec<f64>> {
        self.penultimate_features(x)
    }
}

/// MLP victim ("model B"): flatten, two dense layers.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MlpClassifier {
    id: String,
    input: (usize, usize, usize),
    classes: usize,
    fc1: Dense,
    fc2: Dense,
}

impl MlpClassifier {
    pub fn new(input: (usize, usize, usize), classes: usize, seed: u64) -> Self {
        let dim = input.0 * input.1 * input.2;
        let mut r = stream(seed);
        MlpClassifier {
            id: "mlp".to_string(),
            input,
            classes,
            fc1: Dense::new(dim, 64, &mut r),
            fc2: Dense::new(64, classes, &mut r),
        }
    }

    fn forward2(&self, x: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let z1 = self.fc1.forward(x);
        let a1 = relu2_forward(&z1);
        let logits = self.fc2.forward(&a1);
        (z1, logits)
    }

    pub fn train(&mut self, data: &[LabeledImage], cfg: &TrainConfig) -> Result<TrainReport> {
        if data.is_empty() {
            return Err(Error::parameter("empty training split"));
        }
        let hp = AdamParams {
            lr: cfg.learning_rate,
            ..AdamParams::default()
        };
        let mut rng = stream(cfg.seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut report = TrainReport::default();
        let mut step = 0usize;
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            let mut batches = 0usize;
            for chunk in order.chunks(cfg.batch_size) {
                let samples: Vec<&LabeledImage> = chunk.iter().map(|&i| &data[i]).collect();
                let (x4, labels) = stack(&samples);
                let x = flatten2(&x4);
                let (z1, logits) = self.forward2(&x);
                let a1 = relu2_forward(&z1);
                let (loss, dlogits) = softmax_ce_loss(&logits, &labels);
                epoch_loss += loss;
                batches += 1;
                self.fc1.zero_grad();
                self.fc2.zero_grad();
                let da1 = self.fc2.backward(&a1, &dlogits);
                let dz1 = relu2_backward(&z1, &da1);
                self.fc1.backward(&x, &dz1);
                step += 1;
                self.fc1.step(&hp, step);
                self.fc2.step(&hp, step);
            }
            report.epoch_losses.push(epoch_loss / batches as f64);
        }
        Ok(report)
    }
}

impl TargetModelAdapter for MlpClassifier {
    fn id(&self) -> &str {
        &self.id
    }

    fn class_count(&self) -> usize {
        self.classes
    }

    fn input_shape(&self) -> (usize, usize, usize) {
        self.input
    }

    fn logits(&self, x: &ImageTensor) -> Result<Vec<f64>> {
        let xb = flatten2(&to_batch(x)?);
        let (_, logits) = self.forward2(&xb);
        Ok(logits.row(0).to_vec())
    }

    fn has_input_gradients(&self) -> bool {
        true
    }

    fn grad_log_prob(&self, x: &ImageTensor, class: usize) -> Result<ImageTensor> {
        if class >= self.classes {
            return Err(Error::parameter(format!(
                "class {class} outside 0..{}",
                self.classes
            )));
        }
        let xb = flatten2(&to_batch(x)?);
        let (z1, logits) = self.forward2(&xb);
        let lp = crate::models::log_softmax(&logits.row(0).to_vec());
        let mut dlogits = Array2::zeros(logits.raw_dim());
        for k in 0..self.classes {
            dlogits[[0, k]] = (if k == class { 1.0 } else { 0.0 }) - lp[k].exp();
        }
        let da1 = self.fc2.backward_data(&dlogits);
        let dz1 = relu2_backward(&z1, &da1);
        let dx = self.fc1.backward_data(&dz1);
        let (c, h, w) = self.input;
        let dx4 = unflatten2(&dx, (1, c, h, w));
        Ok(ImageTensor::new(
            dx4.index_axis(ndarray::Axis(0), 0).to_owned(),
            ValueRange::Pixel,
        ))
    }
}

/// Fraction of correctly predicted samples.
pub fn accuracy(model: &dyn TargetModelAdapter, data: &[LabeledImage]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::parameter("empty evaluation split"));
    }
    let mut hits = 0usize;
    for s in data {
        if model.predict(&s.image)? == s.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}
