//! Minimal neural-network layers with explicit backward passes.
//!
//! Everything is f64 and single-threaded so training and inference are
//! bit-reproducible across runs and thread counts. Batched tensors are
//! `[batch, channels, height, width]` for conv layers and
//! `[batch, features]` for dense layers. Convolutions are 3x3, stride 1,
//! zero-padded, implemented via im2col and a GEMM.

use ndarray::{Array1, Array2, Array4, Axis, Dimension, Zip};
use rand_chacha::ChaCha8Rng;

use crate::rng;

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// A trainable array with its gradient accumulator and Adam moments.
#[derive(Clone, Debug)]
pub struct Param<D: Dimension> {
    pub value: ndarray::Array<f64, D>,
    pub grad: ndarray::Array<f64, D>,
    m: ndarray::Array<f64, D>,
    v: ndarray::Array<f64, D>,
}

impl<D: Dimension> Param<D> {
    pub fn new(value: ndarray::Array<f64, D>) -> Self {
        let grad = ndarray::Array::zeros(value.raw_dim());
        let m = ndarray::Array::zeros(value.raw_dim());
        let v = ndarray::Array::zeros(value.raw_dim());
        Param { value, grad, m, v }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    /// One bias-corrected Adam update; `step` counts from 1.
    pub fn step(&mut self, hp: &AdamParams, step: usize) {
        let bc1 = 1.0 - hp.beta1.powi(step as i32);
        let bc2 = 1.0 - hp.beta2.powi(step as i32);
        Zip::from(&mut self.value)
            .and(&self.grad)
            .and(&mut self.m)
            .and(&mut self.v)
            .for_each(|val, &g, m, v| {
                *m = hp.beta1 * *m + (1.0 - hp.beta1) * g;
                *v = hp.beta2 * *v + (1.0 - hp.beta2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *val -= hp.lr * mhat / (vhat.sqrt() + hp.eps);
            });
    }
}

/// Checkpoints keep only the value; gradient and moments restart at zero.
impl<D> serde::Serialize for Param<D>
where
    D: Dimension + serde::Serialize,
{
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.value.serialize(s)
    }
}

impl<'de, D> serde::Deserialize<'de> for Param<D>
where
    D: Dimension + serde::Deserialize<'de>,
{
    fn deserialize<De: serde::Deserializer<'de>>(d: De) -> std::result::Result<Self, De::Error> {
        Ok(Param::new(ndarray::Array::<f64, D>::deserialize(d)?))
    }
}

/// He-normal initialization: std = sqrt(2 / fan_in).
pub fn he_normal(rows: usize, cols: usize, fan_in: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let std = (2.0 / fan_in as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| std * rng::normal(rng))
}

/// 3x3 same-padding convolution.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct Conv3x3 {
    pub in_c: usize,
    pub out_c: usize,
    /// `[out_c, in_c * 9]`
    pub w: Param<ndarray::Ix2>,
    pub b: Param<ndarray::Ix1>,
}

/// Backward context for a conv call: the im2col matrix and input dims.
pub struct ConvCtx {
    cols: Array2<f64>,
    in_shape: (usize, usize, usize, usize),
}

impl Conv3x3 {
    pub fn new(in_c: usize, out_c: usize, rng: &mut ChaCha8Rng) -> Self {
        Conv3x3 {
            in_c,
            out_c,
            w: Param::new(he_normal(out_c, in_c * 9, in_c * 9, rng)),
            b: Param::new(Array1::zeros(out_c)),
        }
    }

    fn im2col(&self, x: &Array4<f64>) -> Array2<f64> {
        let (bs, c, h, w) = x.dim();
        debug_assert_eq!(c, self.in_c);
        let mut cols = Array2::zeros((bs * h * w, c * 9));
        for b in 0..bs {
            for y in 0..h {
                for xx in 0..w {
                    let row = (b * h + y) * w + xx;
                    for ci in 0..c {
                        for ky in 0..3usize {
                            let sy = y as isize + ky as isize - 1;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            for kx in 0..3usize {
                                let sx = xx as isize + kx as isize - 1;
                                if sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                cols[[row, ci * 9 + ky * 3 + kx]] =
                                    x[[b, ci, sy as usize, sx as usize]];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, dcols: &Array2<f64>, dims: (usize, usize, usize, usize)) -> Array4<f64> {
        let (bs, c, h, w) = dims;
        let mut dx = Array4::zeros(dims);
        for b in 0..bs {
            for y in 0..h {
                for xx in 0..w {
                    let row = (b * h + y) * w + xx;
                    for ci in 0..c {
                        for ky in 0..3usize {
                            let sy = y as isize + ky as isize - 1;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            for kx in 0..3usize {
                                let sx = xx as isize + kx as isize - 1;
                                if sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                dx[[b, ci, sy as usize, sx as usize]] +=
                                    dcols[[row, ci * 9 + ky * 3 + kx]];
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward(&self, x: &Array4<f64>) -> (Array4<f64>, ConvCtx) {
        let (bs, _, h, w) = x.dim();
        let cols = self.im2col(x);
        let y_mat = cols.dot(&self.w.value.t());
        let mut y = Array4::zeros((bs, self.out_c, h, w));
        for b in 0..bs {
            for o in 0..self.out_c {
                let bias = self.b.value[o];
                for yy in 0..h {
                    for xx in 0..w {
                        y[[b, o, yy, xx]] = y_mat[[(b * h + yy) * w + xx, o]] + bias;
                    }
                }
            }
        }
        (
            y,
            ConvCtx {
                cols,
                in_shape: x.dim().into(),
            },
        )
    }

    fn dy_matrix(&self, dy: &Array4<f64>) -> Array2<f64> {
        let (bs, oc, h, w) = dy.dim();
        debug_assert_eq!(oc, self.out_c);
        let mut m = Array2::zeros((bs * h * w, oc));
        for b in 0..bs {
            for o in 0..oc {
                for yy in 0..h {
                    for xx in 0..w {
                        m[[(b * h + yy) * w + xx, o]] = dy[[b, o, yy, xx]];
                    }
                }
            }
        }
        m
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, ctx: &ConvCtx, dy: &Array4<f64>) -> Array4<f64> {
        let dy_mat = self.dy_matrix(dy);
        self.w.grad += &dy_mat.t().dot(&ctx.cols);
        self.b.grad += &dy_mat.sum_axis(Axis(0));
        let dcols = dy_mat.dot(&self.w.value);
        self.col2im(&dcols, ctx.in_shape)
    }

    /// Input gradient only; parameters untouched. For explanation paths.
    pub fn backward_data(&self, dy: &Array4<f64>, in_shape: (usize, usize, usize, usize)) -> Array4<f64> {
        let dy_mat = self.dy_matrix(dy);
        let dcols = dy_mat.dot(&self.w.value);
        self.col2im(&dcols, in_shape)
    }

    pub fn zero_grad(&mut self) {
        self.w.zero_grad();
        self.b.zero_grad();
    }

    pub fn step(&mut self, hp: &AdamParams, t: usize) {
        self.w.step(hp, t);
        self.b.step(hp, t);
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

/// Fully connected layer.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct Dense {
    pub in_f: usize,
    pub out_f: usize,
    /// `[out_f, in_f]`
    pub w: Param<ndarray::Ix2>,
    pub b: Param<ndarray::Ix1>,
}

impl Dense {
    pub fn new(in_f: usize, out_f: usize, rng: &mut ChaCha8Rng) -> Self {
        Dense {
            in_f,
            out_f,
            w: Param::new(he_normal(out_f, in_f, in_f, rng)),
            b: Param::new(Array1::zeros(out_f)),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w.value.t()) + &self.b.value
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
        self.w.grad += &dy.t().dot(x);
        self.b.grad += &dy.sum_axis(Axis(0));
        dy.dot(&self.w.value)
    }

    pub fn backward_data(&self, dy: &Array2<f64>) -> Array2<f64> {
        dy.dot(&self.w.value)
    }

    pub fn zero_grad(&mut self) {
        self.w.zero_grad();
        self.b.zero_grad();
    }

    pub fn step(&mut self, hp: &AdamParams, t: usize) {
        self.w.step(hp, t);
        self.b.step(hp, t);
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

/// Lookup table for discrete conditioning (class labels plus a null row).
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct Embedding {
    pub rows: usize,
    pub dim: usize,
    pub table: Param<ndarray::Ix2>,
}

impl Embedding {
    pub fn new(rows: usize, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let std = 0.1;
        let table = Array2::from_shape_fn((rows, dim), |_| std * rng::normal(rng));
        Embedding {
            rows,
            dim,
            table: Param::new(table),
        }
    }

    pub fn forward(&self, ids: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((ids.len(), self.dim));
        for (i, &id) in ids.iter().enumerate() {
            out.row_mut(i).assign(&self.table.value.row(id));
        }
        out
    }

    pub fn backward(&mut self, ids: &[usize], dy: &Array2<f64>) {
        for (i, &id) in ids.iter().enumerate() {
            let mut row = self.table.grad.row_mut(id);
            row += &dy.row(i);
        }
    }

    pub fn zero_grad(&mut self) {
        self.table.zero_grad();
    }

    pub fn step(&mut self, hp: &AdamParams, t: usize) {
        self.table.step(hp, t);
    }
}

pub fn relu_forward(x: &Array4<f64>) -> Array4<f64> {
    x.mapv(|v| v.max(0.0))
}

pub fn relu_backward(x_pre: &Array4<f64>, dy: &Array4<f64>) -> Array4<f64> {
    let mut dx = dy.clone();
    Zip::from(&mut dx).and(x_pre).for_each(|d, &p| {
        if p <= 0.0 {
            *d = 0.0;
        }
    });
    dx
}

pub fn relu2_forward(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

pub fn relu2_backward(x_pre: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = dy.clone();
    Zip::from(&mut dx).and(x_pre).for_each(|d, &p| {
        if p <= 0.0 {
            *d = 0.0;
        }
    });
    dx
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn silu_forward(x: &Array4<f64>) -> Array4<f64> {
    x.mapv(|v| v * sigmoid(v))
}

pub fn silu_backward(x_pre: &Array4<f64>, dy: &Array4<f64>) -> Array4<f64> {
    let mut dx = dy.clone();
    Zip::from(&mut dx).and(x_pre).for_each(|d, &p| {
        let s = sigmoid(p);
        *d *= s * (1.0 + p * (1.0 - s));
    });
    dx
}

pub fn silu2_forward(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v * sigmoid(v))
}

pub fn silu2_backward(x_pre: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = dy.clone();
    Zip::from(&mut dx).and(x_pre).for_each(|d, &p| {
        let s = sigmoid(p);
        *d *= s * (1.0 + p * (1.0 - s));
    });
    dx
}

/// 2x2 average pooling; spatial dims must be even.
pub fn avgpool2_forward(x: &Array4<f64>) -> Array4<f64> {
    let (b, c, h, w) = x.dim();
    debug_assert!(h % 2 == 0 && w % 2 == 0);
    let mut y = Array4::zeros((b, c, h / 2, w / 2));
    for bi in 0..b {
        for ci in 0..c {
            for yi in 0..h / 2 {
                for xi in 0..w / 2 {
                    y[[bi, ci, yi, xi]] = 0.25
                        * (x[[bi, ci, 2 * yi, 2 * xi]]
                            + x[[bi, ci, 2 * yi, 2 * xi + 1]]
                            + x[[bi, ci, 2 * yi + 1, 2 * xi]]
                            + x[[bi, ci, 2 * yi + 1, 2 * xi + 1]]);
                }
            }
        }
    }
    y
}

pub fn avgpool2_backward(dy: &Array4<f64>) -> Array4<f64> {
    let (b, c, h2, w2) = dy.dim();
    let mut dx = Array4::zeros((b, c, h2 * 2, w2 * 2));
    for bi in 0..b {
        for ci in 0..c {
            for yi in 0..h2 {
                for xi in 0..w2 {
                    let g = dy[[bi, ci, yi, xi]] * 0.25;
                    dx[[bi, ci, 2 * yi, 2 * xi]] = g;
                    dx[[bi, ci, 2 * yi, 2 * xi + 1]] = g;
                    dx[[bi, ci, 2 * yi + 1, 2 * xi]] = g;
                    dx[[bi, ci, 2 * yi + 1, 2 * xi + 1]] = g;
                }
            }
        }
    }
    dx
}

/// Nearest-neighbor 2x upsampling.
pub fn upsample2_forward(x: &Array4<f64>) -> Array4<f64> {
    let (b, c, h, w) = x.dim();
    let mut y = Array4::zeros((b, c, h * 2, w * 2));
    for bi in 0..b {
        for ci in 0..c {
            for yi in 0..h {
                for xi in 0..w {
                    let v = x[[bi, ci, yi, xi]];
                    y[[bi, ci, 2 * yi, 2 * xi]] = v;
                    y[[bi, ci, 2 * yi, 2 * xi + 1]] = v;
                    y[[bi, ci, 2 * yi + 1, 2 * xi]] = v;
                    y[[bi, ci, 2 * yi + 1, 2 * xi + 1]] = v;
                }
            }
        }
    }
    y
}

pub fn upsample2_backward(dy: &Array4<f64>) -> Array4<f64> {
    let (b, c, h2, w2) = dy.dim();
    let mut dx = Array4::zeros((b, c, h2 / 2, w2 / 2));
    for bi in 0..b {
        for ci in 0..c {
            for yi in 0..h2 / 2 {
                for xi in 0..w2 / 2 {
                    dx[[bi, ci, yi, xi]] = dy[[bi, ci, 2 * yi, 2 * xi]]
                        + dy[[bi, ci, 2 * yi, 2 * xi + 1]]
                        + dy[[bi, ci, 2 * yi + 1, 2 * xi]]
                        + dy[[bi, ci, 2 * yi + 1, 2 * xi + 1]];
                }
            }
        }
    }
    dx
}

/// Global average pooling `[B, C, H, W] -> [B, C]`.
pub fn gap_forward(x: &Array4<f64>) -> Array2<f64> {
    let (b, c, h, w) = x.dim();
    let area = (h * w) as f64;
    let mut y = Array2::zeros((b, c));
    for bi in 0..b {
        for ci in 0..c {
            let mut s = 0.0;
            for yi in 0..h {
                for xi in 0..w {
                    s += x[[bi, ci, yi, xi]];
                }
            }
            y[[bi, ci]] = s / area;
        }
    }
    y
}

pub fn gap_backward(dy: &Array2<f64>, h: usize, w: usize) -> Array4<f64> {
    let (b, c) = dy.dim();
    let area = (h * w) as f64;
    let mut dx = Array4::zeros((b, c, h, w));
    for bi in 0..b {
        for ci in 0..c {
            let g = dy[[bi, ci]] / area;
            for yi in 0..h {
                for xi in 0..w {
                    dx[[bi, ci, yi, xi]] = g;
                }
            }
        }
    }
    dx
}

/// Mean cross-entropy over a batch; returns the loss and `d loss / d logits`.
pub fn softmax_ce_loss(logits: &Array2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    let (b, _k) = logits.dim();
    debug_assert_eq!(b, labels.len());
    let mut loss = 0.0;
    let mut dlogits = Array2::zeros(logits.raw_dim());
    for bi in 0..b {
        let row: Vec<f64> = logits.row(bi).to_vec();
        let lp = crate::models::log_softmax(&row);
        loss -= lp[labels[bi]];
        for (k, &l) in lp.iter().enumerate() {
            let p = l.exp();
            dlogits[[bi, k]] = (p - if k == labels[bi] { 1.0 } else { 0.0 }) / b as f64;
        }
    }
    (loss / b as f64, dlogits)
}

/// Mean squared error over all elements; returns loss and `d loss / d pred`.
pub fn mse_loss(pred: &Array4<f64>, target: &Array4<f64>) -> (f64, Array4<f64>) {
    debug_assert_eq!(pred.dim(), target.dim());
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut d = Array4::zeros(pred.raw_dim());
    Zip::from(&mut d).and(pred).and(target).for_each(|g, &p, &t| {
        let e = p - t;
        loss += e * e;
        *g = 2.0 * e / n;
    });
    (loss / n, d)
}

/// Sinusoidal position embedding of a timestep, dimension must be even.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    debug_assert!(dim % 2 == 0);
    let half = dim / 2;
    let mut e = vec![0.0; dim];
    for i in 0..half {
        let freq = (10_000f64).powf(-(i as f64) / half as f64);
        let arg = t as f64 * freq;
        e[2 * i] = arg.sin();
        e[2 * i + 1] = arg.cos();
    }
    e
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use approx::assert_relative_eq;

    fn rand4(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f64> {
        let mut r = stream(seed);
        Array4::from_shape_fn(shape, |_| crate::rng::normal(&mut r))
    }

    fn rand2(shape: (usize, usize), seed: u64) -> Array2<f64> {
        let mut r = stream(seed);
        Array2::from_shape_fn(shape, |_| crate::rng::normal(&mut r))
    }

    /// Scalar probe: weighted sum of all elements with fixed random weights.
    fn probe4(y: &Array4<f64>, seed: u64) -> f64 {
        let w = rand4(y.dim(), seed);
        (y * &w).sum()
    }

    fn probe4_grad(dim: (usize, usize, usize, usize), seed: u64) -> Array4<f64> {
        rand4(dim, seed)
    }

    #[test]
    fn conv_input_gradient_matches_finite_differences() {
        let mut r = stream(1);
        let mut conv = Conv3x3::new(2, 3, &mut r);
        let x = rand4((1, 2, 4, 4), 2);
        let (y, ctx) = conv.forward(&x);
        let dy = probe4_grad(y.dim(), 3);
        let dx = conv.backward(&ctx, &dy);
        let h = 1e-6;
        for idx in [[0, 0, 0, 0], [0, 1, 2, 3], [0, 0, 3, 1], [0, 1, 1, 2]] {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let fp = probe4(&conv.forward(&xp).0, 3);
            let fm = probe4(&conv.forward(&xm).0, 3);
            assert_relative_eq!(dx[idx], (fp - fm) / (2.0 * h), epsilon = 1e-5);
        }
    }

    #[test]
    fn conv_weight_gradient_matches_finite_differences() {
        let mut r = stream(4);
        let mut conv = Conv3x3::new(1, 2, &mut r);
        let x = rand4((2, 1, 3, 3), 5);
        let (y, ctx) = conv.forward(&x);
        let dy = probe4_grad(y.dim(), 6);
        conv.zero_grad();
        conv.backward(&ctx, &dy);
        let h = 1e-6;
        for idx in [[0, 0], [1, 4], [0, 8], [1, 2]] {
            let mut cp = conv.clone();
            cp.w.value[idx] += h;
            let mut cm = conv.clone();
            cm.w.value[idx] -= h;
            let fp = probe4(&cp.forward(&x).0, 6);
            let fm = probe4(&cm.forward(&x).0, 6);
            assert_relative_eq!(conv.w.grad[idx], (fp - fm) / (2.0 * h), epsilon = 1e-5);
        }
        // Bias gradient: column sums of dy.
        let mut cp = conv.clone();
        cp.b.value[1] += h;
        let mut cm = conv.clone();
        cm.b.value[1] -= h;
        let fp = probe4(&cp.forward(&x).0, 6);
        let fm = probe4(&cm.forward(&x).0, 6);
        assert_relative_eq!(conv.b.grad[1], (fp - fm) / (2.0 * h), epsilon = 1e-5);
    }

    #[test]
    fn conv_backward_data_equals_backward_input_grad() {
        let mut r = stream(7);
        let mut conv = Conv3x3::new(2, 2, &mut r);
        let x = rand4((1, 2, 4, 4), 8);
        let (y, ctx) = conv.forward(&x);
        let dy = probe4_grad(y.dim(), 9);
        let dx1 = conv.backward(&ctx, &dy);
        let dx2 = conv.backward_data(&dy, x.dim());
        assert_eq!(dx1, dx2);
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        let mut r = stream(10);
        let mut d = Dense::new(3, 4, &mut r);
        let x = rand2((2, 3), 11);
        let y = d.forward(&x);
        let wprobe = rand2(y.dim(), 12);
        let dy = wprobe.clone();
        d.zero_grad();
        let dx = d.backward(&x, &dy);
        let h = 1e-6;
        for idx in [[0, 0], [1, 2], [3, 1]] {
            let mut dp = d.clone();
            dp.w.value[idx] += h;
            let mut dm = d.clone();
            dm.w.value[idx] -= h;
            let fp = (&dp.forward(&x) * &wprobe).sum();
            let fm = (&dm.forward(&x) * &wprobe).sum();
            assert_relative_eq!(d.w.grad[idx], (fp - fm) / (2.0 * h), epsilon = 1e-5);
        }
        for idx in [[0, 0], [1, 2]] {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let fp = (&d.forward(&xp) * &wprobe).sum();
            let fm = (&d.forward(&xm) * &wprobe).sum();
            assert_relative_eq!(dx[idx], (fp - fm) / (2.0 * h), epsilon = 1e-5);
        }
    }

    /// Pooling and upsampling are linear; their backward passes must be the
    /// exact adjoint: `<Ax, y> = <x, A^T y>`.
    #[test]
    fn pool_and_upsample_backwards_are_adjoint()
    {
        let x = rand4((2, 3, 4, 4), 13);
        let y = rand4((2, 3, 2, 2), 14);
        let lhs = (&avgpool2_forward(&x) * &y).sum();
        let rhs = (&x * &avgpool2_backward(&y)).sum();
        assert_relative_eq!(lhs, rhs, epsilon = 1e-12);

        let u = rand4((2, 3, 2, 2), 15);
        let v = rand4((2, 3, 4, 4), 16);
        let lhs = (&upsample2_forward(&u) * &v).sum();
        let rhs = (&u * &upsample2_backward(&v)).sum();
        assert_relative_eq!(lhs, rhs, epsilon = 1e-12);

        let g = rand4((2, 3, 4, 4), 17);
        let q = rand2((2, 3), 18);
        let lhs = (&gap_forward(&g) * &q).sum();
        let rhs = (&g * &gap_backward(&q, 4, 4)).sum();
        assert_relative_eq!(lhs, rhs, epsilon = 1e-12);
    }

    #[test]
    fn activation_gradients_match_finite_differences() {
        let x = rand4((1, 2, 3, 3), 19);
        let dy = rand4((1, 2, 3, 3), 20);
        let h = 1e-6;
        let silu_dx = silu_backward(&x, &dy);
        let relu_dx = relu_backward(&x, &dy);
        for idx in [[0, 0, 0, 0], [0, 1, 2, 2], [0, 0, 1, 2]] {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let sp = (&silu_forward(&xp) * &dy).sum();
            let sm = (&silu_forward(&xm) * &dy).sum();
            assert_relative_eq!(silu_dx[idx], (sp - sm) / (2.0 * h), epsilon = 1e-5);
            let rp = (&relu_forward(&xp) * &dy).sum();
            let rm = (&relu_forward(&xm) * &dy).sum();
            assert_relative_eq!(relu_dx[idx], (rp - rm) / (2.0 * h), epsilon = 1e-4);
        }
    }

    #[test]
    fn cross_entropy_matches_hand_computation_and_fd() {
        let logits = rand2((3, 4), 21);
        let labels = [2usize, 0, 3];
        let (loss, dlogits) = softmax_ce_loss(&logits, &labels);
        // Hand value.
        let mut expect = 0.0;
        for (b, &l) in labels.iter().enumerate() {
            let row: Vec<f64> = logits.row(b).to_vec();
            expect -= crate::models::log_softmax(&row)[l];
        }
        assert_relative_eq!(loss, expect / 3.0, max_relative = 1e-12);
        let h = 1e-6;
        for idx in [[0, 0], [1, 3], [2, 2]] {
            let mut lp = logits.clone();
            lp[idx] += h;
            let mut lm = logits.clone();
            lm[idx] -= h;
            let fp = softmax_ce_loss(&lp, &labels).0;
            let fm = softmax_ce_loss(&lm, &labels).0;
            assert_relative_eq!(dlogits[idx], (fp - fm) / (2.0 * h), epsilon = 1e-6);
        }
    }

    #[test]
    fn mse_loss_gradient_is_exact() {
        let p = rand4((1, 1, 2, 2), 22);
        let t = rand4((1, 1, 2, 2), 23);
        let (loss, d) = mse_loss(&p, &t);
        let mut expect = 0.0;
        for (a, b) in p.iter().zip(t.iter()) {
            expect += (a - b) * (a - b);
        }
        assert_relative_eq!(loss, expect / 4.0, max_relative = 1e-12);
        for (g, (a, b)) in d.iter().zip(p.iter().zip(t.iter())) {
            assert_relative_eq!(*g, 2.0 * (a - b) / 4.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn adam_first_step_matches_hand_computation() {
        let mut p = Param::new(ndarray::arr1(&[1.0]));
        p.grad[0] = 0.5;
        let hp = AdamParams {
            lr: 0.1,
            ..AdamParams::default()
        };
        p.step(&hp, 1);
        // mhat = g, vhat = g^2, so the first update is ~lr * sign(g).
        let expect = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8);
        assert_relative_eq!(p.value[0], expect, max_relative = 1e-9);
    }

    #[test]
    fn embedding_backward_accumulates_rows() {
        let mut r = stream(24);
        let mut e = Embedding::new(3, 2, &mut r);
        let ids = [1usize, 1, 2];
        let dy = rand2((3, 2), 25);
        e.zero_grad();
        e.backward(&ids, &dy);
        assert_relative_eq!(e.table.grad[[1, 0]], dy[[0, 0]] + dy[[1, 0]], max_relative = 1e-12);
        assert_relative_eq!(e.table.grad[[2, 1]], dy[[2, 1]], max_relative = 1e-12);
        assert_eq!(e.table.grad[[0, 0]], 0.0);
    }

    #[test]
    fn time_embedding_components_are_bounded_and_distinct() {
        let a = time_embedding(1, 16);
        let b = time_embedding(2, 16);
        assert!(a.iter().all(|v| v.abs() <= 1.0));
        assert_ne!(a, b);
    }
}
