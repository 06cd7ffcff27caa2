//! Toy embedding model for similarity (recognition-style) attacks.
//!
//! One conv block, one dense projection, L2 normalization. Trained with a
//! classification head over the normalized embedding, then the head is kept
//! only for training; attacks use the unit-norm embedding and cosine
//! similarity.

use ndarray::{Array2, Array4, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::classifier::{stack, to_batch, TrainReport};
use crate::models::dataset::LabeledImage;
use crate::models::nn::{
    avgpool2_backward, avgpool2_forward, he_normal, relu_backward, relu_forward, softmax_ce_loss,
    AdamParams, Conv3x3, Dense, Param,
};
use crate::models::SimilarityModelAdapter;
use crate::rng::stream;
use crate::tensor::{ImageTensor, ValueRange};

/// Scale applied to head logits; cosines keep raw logits in a narrow band,
/// which stalls cross-entropy without it.
const LOGIT_SCALE: f64 = 16.0;

/// Classification head whose logits are cosines against per-class weight
/// directions. Normalizing the weight rows forces the loss to separate
/// embeddings by angle; an unconstrained head can shrink the loss by growing
/// weight norms while the embeddings collapse into a narrow cone.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct CosineHead {
    w: Param<ndarray::Ix2>,
}

impl CosineHead {
    fn new(dim: usize, classes: usize, rng: &mut ChaCha8Rng) -> Self {
        CosineHead {
            w: Param::new(he_normal(classes, dim, dim, rng)),
        }
    }

    fn unit_rows(&self) -> (Array2<f64>, Vec<f64>) {
        let (c, d) = self.w.value.dim();
        let mut unit = self.w.value.clone();
        let mut norms = Vec::with_capacity(c);
        for ci in 0..c {
            let n = unit
                .row(ci)
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt()
                .max(1e-12);
            norms.push(n);
            for j in 0..d {
                unit[[ci, j]] /= n;
            }
        }
        (unit, norms)
    }

    /// `cos(e_b, w_c)` for unit-norm embeddings `e`.
    fn forward(&self, e: &Array2<f64>) -> Array2<f64> {
        let (unit, _) = self.unit_rows();
        e.dot(&unit.t())
    }

    /// Accumulates weight gradients through the row normalization and
    /// returns the embedding gradient.
    fn backward(&mut self, e: &Array2<f64>, dlogits: &Array2<f64>) -> Array2<f64> {
        let (unit, norms) = self.unit_rows();
        let de = dlogits.dot(&unit);
        let dunit = dlogits.t().dot(e);
        let (c, d) = self.w.value.dim();
        for ci in 0..c {
            let u = unit.row(ci);
            let g = dunit.row(ci);
            let dot: f64 = g.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
            for j in 0..d {
                self.w.grad[[ci, j]] += (g[j] - dot * u[j]) / norms[ci];
            }
        }
        de
    }

    fn zero_grad(&mut self) {
        self.w.zero_grad();
    }

    fn step(&mut self, hp: &AdamParams, t: usize) {
        self.w.step(hp, t);
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderConfig {
    pub embedding_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            embedding_dim: 32,
            epochs: 10,
            batch_size: 50,
            learning_rate: 2e-3,
            seed: 17,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ToyEmbedder {
    input: (usize, usize, usize),
    dim: usize,
    conv: Conv3x3,
    proj: Dense,
    head: CosineHead,
}

struct EmbedTrace {
    z1: Array4<f64>,
    p1: Array4<f64>,
    flat: Array2<f64>,
    norm: Array2<f64>,
    norms: Vec<f64>,
}

fn flatten(x: &Array4<f64>) -> Array2<f64> {
    let (b, c, h, w) = x.dim();
    let mut out = Array2::zeros((b, c * h * w));
    for (i, v) in x.iter().enumerate() {
        out[[i / (c * h * w), i % (c * h * w)]] = *v;
    }
    out
}

fn unflatten(x: &Array2<f64>, dims: (usize, usize, usize, usize)) -> Array4<f64> {
    let (_, c, h, w) = dims;
    let mut out = Array4::zeros(dims);
    for (i, v) in out.iter_mut().enumerate() {
        *v = x[[i / (c * h * w), i % (c * h * w)]];
    }
    out
}

impl ToyEmbedder {
    pub fn new(input: (usize, usize, usize), cfg: &EmbedderConfig) -> Result<Self> {
        let (c, h, w) = input;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::parameter("embedder needs even spatial dims"));
        }
        let mut r = stream(cfg.seed);
        let flat_dim = 8 * (h / 2) * (w / 2);
        Ok(ToyEmbedder {
            input,
            dim: cfg.embedding_dim,
            conv: Conv3x3::new(c, 8, &mut r),
            proj: Dense::new(flat_dim, cfg.embedding_dim, &mut r),
            head: CosineHead::new(cfg.embedding_dim, crate::models::dataset::CLASS_COUNT, &mut r),
        })
    }

    fn forward_trace(&self, x: &Array4<f64>) -> EmbedTrace {
        let (z1, _) = self.conv.forward(x);
        let a1 = relu_forward(&z1);
        let p1 = avgpool2_forward(&a1);
        let flat = flatten(&p1);
        let raw = self.proj.forward(&flat);
        let b = raw.dim().0;
        let mut norm = raw.clone();
        let mut norms = Vec::with_capacity(b);
        for bi in 0..b {
            let n = raw.row(bi).iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            norms.push(n);
            for v in norm.row_mut(bi).iter_mut() {
                *v /= n;
            }
        }
        EmbedTrace {
            z1,
            p1,
            flat,
            norm,
            norms,
        }
    }

    /// Backward of the normalize layer: `dz = (de - (de . e) e) / ||z||`.
    fn normalize_backward(tr: &EmbedTrace, dnorm: &Array2<f64>) -> Array2<f64> {
        let (b, d) = dnorm.dim();
        let mut draw = Array2::zeros((b, d));
        for bi in 0..b {
            let e = tr.norm.row(bi);
            let de = dnorm.row(bi);
            let dot: f64 = de.iter().zip(e.iter()).map(|(a, b)| a * b).sum();
            for j in 0..d {
                draw[[bi, j]] = (de[j] - dot * e[j]) / tr.norms[bi];
            }
        }
        draw
    }

    /// Input gradient for an upstream gradient on the normalized embedding.
    fn backward_input(&self, x: &Array4<f64>, tr: &EmbedTrace, dnorm: &Array2<f64>) -> Array4<f64> {
        let draw = Self::normalize_backward(tr, dnorm);
        let dflat = self.proj.backward_data(&draw);
        let dp1 = unflatten(&dflat, tr.p1.dim());
        let da1 = avgpool2_backward(&dp1);
        let dz1 = relu_backward(&tr.z1, &da1);
        self.conv.backward_data(&dz1, x.dim())
    }

    pub fn train(&mut self, data: &[LabeledImage], cfg: &EmbedderConfig) -> Result<TrainReport> {
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
                let logits = self.head.forward(&tr.norm).mapv(|v| v * LOGIT_SCALE);
                let (loss, mut dlogits) = softmax_ce_loss(&logits, &labels);
                dlogits.mapv_inplace(|v| v * LOGIT_SCALE);
                epoch_loss += loss;
                batches += 1;

                self.conv.zero_grad();
                self.proj.zero_grad();
                self.head.zero_grad();
                let dnorm = self.head.backward(&tr.norm, &dlogits);
                let draw = Self::normalize_backward(&tr, &dnorm);
                let dflat = self.proj.backward(&tr.flat, &draw);
                let dp1 = unflatten(&dflat, tr.p1.dim());
                let da1 = avgpool2_backward(&dp1);
                let dz1 = relu_backward(&tr.z1, &da1);
                let (_, ctx) = self.conv.forward(&x);
                self.conv.backward(&ctx, &dz1);

                step += 1;
                self.conv.step(&hp, step);
                self.proj.step(&hp, step);
                self.head.step(&hp, step);
            }
            report.epoch_losses.push(epoch_loss / batches as f64);
        }
        Ok(report)
    }
}

impl SimilarityModelAdapter for ToyEmbedder {
    fn id(&self) -> &str {
        "embed"
    }

    fn input_shape(&self) -> (usize, usize, usize) {
        self.input
    }

    fn embedding_dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, x: &ImageTensor) -> Result<Vec<f64>> {
        if x.shape() != self.input {
            return Err(Error::shape(format!(
                "expected {:?}, got {:?}",
                self.input,
                x.shape()
            )));
        }
        let tr = self.forward_trace(&to_batch(x)?);
        Ok(tr.norm.row(0).to_vec())
    }

    fn has_input_gradients(&self) -> bool {
        true
    }

    fn embed_vjp(&self, x: &ImageTensor, upstream: &[f64]) -> Result<ImageTensor> {
        if upstream.len() != self.dim {
            return Err(Error::shape(format!(
                "upstream has {} elements, embedding has {}",
                upstream.len(),
                self.dim
            )));
        }
        let xb = to_batch(x)?;
        let tr = self.forward_trace(&xb);
        let mut dnorm = Array2::zeros((1, self.dim));
        for (j, &u) in upstream.iter().enumerate() {
            dnorm[[0, j]] = u;
        }
        let dx = self.backward_input(&xb, &tr, &dnorm);
        Ok(ImageTensor::new(
            dx.index_axis(Axis(0), 0).to_owned(),
            ValueRange::Pixel,
        ))
    }
}

/// Balanced same/different-class pair verification accuracy at a threshold.
pub fn verification_accuracy(
    model: &dyn SimilarityModelAdapter,
    data: &[LabeledImage],
    threshold: f64,
    pairs: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if data.len() < 4 {
        return Err(Error::parameter("need at least 4 samples"));
    }
    let mut by_class: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, s) in data.iter().enumerate() {
        by_class.entry(s.label).or_default().push(i);
    }
    let classes: Vec<usize> = by_class.keys().cloned().collect();
    if classes.len() < 2 {
        return Err(Error::parameter("need at least 2 classes"));
    }
    let mut hits = 0usize;
    let mut total = 0usize;
    for _ in 0..pairs {
        // Same-class pair.
        let c = classes[rng.random_range(0..classes.len())];
        let members = &by_class[&c];
        if members.len() >= 2 {
            let i = members[rng.random_range(0..members.len())];
            let mut j = members[rng.random_range(0..members.len())];
            while j == i {
                j = members[rng.random_range(0..members.len())];
            }
            let e1 = model.embed(&data[i].image)?;
            let e2 = model.embed(&data[j].image)?;
            if model.similarity(&e1, &e2) >= threshold {
                hits += 1;
            }
            total += 1;
        }
        // Different-class pair.
        let c1 = classes[rng.random_range(0..classes.len())];
        let mut c2 = classes[rng.random_range(0..classes.len())];
        while c2 == c1 {
            c2 = classes[rng.random_range(0..classes.len())];
        }
        let i = by_class[&c1][rng.random_range(0..by_class[&c1].len())];
        let j = by_class[&c2][rng.random_range(0..by_class[&c2].len())];
        let e1 = model.embed(&data[i].image)?;
        let e2 = model.embed(&data[j].image)?;
        if model.similarity(&e1, &e2) < threshold {
            hits += 1;
        }
        total += 1;
    }
    Ok(hits as f64 / total as f64)
}
