//! Class-conditional U-Net noise predictor.
//!
//! A small two-level U-Net over diffusion-range images. Conditioning
//! (sinusoidal timestep embedding concatenated with a learned class
//! embedding) enters as per-channel biases at three depths. A null class row
//! backs the unconditional branch; training drops labels with a configured
//! probability so classifier-free guidance has both branches.

use ndarray::{Array2, Array4, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::DiffusionModelAdapter;
use crate::error::{Error, Result};
use crate::models::dataset::LabeledImage;
use crate::models::nn::{
    avgpool2_backward, avgpool2_forward, mse_loss, silu2_backward, silu2_forward, silu_backward,
    silu_forward, time_embedding, upsample2_backward, upsample2_forward, AdamParams, Conv3x3,
    ConvCtx, Dense, Embedding,
};
use crate::rng::stream;
use crate::tensor::{ImageTensor, ValueRange};

const TRUNK_WIDTH: usize = 32;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserConfig {
    /// Base channel width of the U-Net.
    pub channels: usize,
    /// Dimension of each of the two conditioning embeddings.
    pub emb_dim: usize,
    /// Probability of dropping the class label during training.
    pub class_dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            channels: 6,
            emb_dim: 16,
            class_dropout: 0.1,
            epochs: 30,
            batch_size: 50,
            learning_rate: 2e-3,
            seed: 11,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CondUNet {
    input: (usize, usize, usize),
    classes: usize,
    emb_dim: usize,
    class_dropout: f64,
    enc1: Conv3x3,
    enc2: Conv3x3,
    mid: Conv3x3,
    dec2: Conv3x3,
    dec1: Conv3x3,
    out: Conv3x3,
    class_table: Embedding,
    trunk: Dense,
    head_enc2: Dense,
    head_mid: Dense,
    head_dec2: Dense,
}

/// Pre-activation values and conv contexts kept for the backward pass.
struct UNetTrace {
    cond_in: Array2<f64>,
    trunk_z: Array2<f64>,
    trunk_a: Array2<f64>,
    z1: Array4<f64>,
    z2: Array4<f64>,
    zm: Array4<f64>,

    z3: Array4<f64>,
    z4: Array4<f64>,
    eps: Array4<f64>,
    ctx1: ConvCtx,
    ctx2: ConvCtx,
    ctxm: ConvCtx,
    ctx3: ConvCtx,
    ctx4: ConvCtx,
    ctxo: ConvCtx,
    ids: Vec<usize>,
}

fn add_channel_bias(z: &mut Array4<f64>, bias: &Array2<f64>) {
    let (b, c, h, w) = z.dim();
    debug_assert_eq!(bias.dim(), (b, c));
    for bi in 0..b {
        for ci in 0..c {
            let v = bias[[bi, ci]];
            for yi in 0..h {
                for xi in 0..w {
                    z[[bi, ci, yi, xi]] += v;
                }
            }
        }
    }
}

fn channel_bias_grad(dz: &Array4<f64>) -> Array2<f64> {
    let (b, c, h, w) = dz.dim();
    let mut g = Array2::zeros((b, c));
    for bi in 0..b {
        for ci in 0..c {
            let mut s = 0.0;
            for yi in 0..h {
                for xi in 0..w {
                    s += dz[[bi, ci, yi, xi]];
                }
            }
            g[[bi, ci]] = s;
        }
    }
    g
}

impl CondUNet {
    pub fn new(input: (usize, usize, usize), classes: usize, cfg: &DenoiserConfig) -> Result<Self> {
        let (c_in, h, w) = input;
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::parameter("denoiser needs spatial dims divisible by 4"));
        }
        if cfg.emb_dim % 2 != 0 {
            return Err(Error::parameter("emb_dim must be even"));
        }
        if !(0.0..1.0).contains(&cfg.class_dropout) {
            return Err(Error::parameter("class_dropout must be in [0, 1)"));
        }
        let ch = cfg.channels;
        let mut r = stream(cfg.seed);
        Ok(CondUNet {
            input,
            classes,

            emb_dim: cfg.emb_dim,
            class_dropout: cfg.class_dropout,
            enc1: Conv3x3::new(c_in, ch, &mut r),
            enc2: Conv3x3::new(ch, 2 * ch, &mut r),
            mid: Conv3x3::new(2 * ch, 2 * ch, &mut r),
            dec2: Conv3x3::new(2 * ch, ch, &mut r),
            dec1: Conv3x3::new(ch, ch, &mut r),
            out: Conv3x3::new(ch, c_in, &mut r),
            class_table: Embedding::new(classes + 1, cfg.emb_dim, &mut r),
            trunk: Dense::new(2 * cfg.emb_dim, TRUNK_WIDTH, &mut r),
            head_enc2: Dense::new(TRUNK_WIDTH, 2 * ch, &mut r),
            head_mid: Dense::new(TRUNK_WIDTH, 2 * ch, &mut r),
            head_dec2: Dense::new(TRUNK_WIDTH, ch, &mut r),
        })
    }

    pub fn null_class(&self) -> usize {
        self.classes
    }

    fn forward_trace(&self, x: &Array4<f64>, ts: &[usize], labels: &[Option<usize>]) -> UNetTrace {
        let b = x.dim().0;
        debug_assert_eq!(b, ts.len());
        debug_assert_eq!(b, labels.len());
        let ids: Vec<usize> = labels
            .iter()
            .map(|l| l.unwrap_or(self.null_class()))
            .collect();
        let mut cond_in = Array2::zeros((b, 2 * self.emb_dim));
        let class_rows = self.class_table.forward(&ids);
        for bi in 0..b {
            let te = time_embedding(ts[bi], self.emb_dim);
            for (j, &v) in te.iter().enumerate() {
                cond_in[[bi, j]] = v;
            }
            for j in 0..self.emb_dim {
                cond_in[[bi, self.emb_dim + j]] = class_rows[[bi, j]];
            }
        }
        let trunk_z = self.trunk.forward(&cond_in);
        let trunk_a = silu2_forward(&trunk_z);
        let b_enc2 = self.head_enc2.forward(&trunk_a);
        let b_mid = self.head_mid.forward(&trunk_a);
        let b_dec2 = self.head_dec2.forward(&trunk_a);

        let (z1, ctx1) = self.enc1.forward(x);
        let a1 = silu_forward(&z1);
        let p1 = avgpool2_forward(&a1);
        let (mut z2, ctx2) = self.enc2.forward(&p1);
        add_channel_bias(&mut z2, &b_enc2);
        let a2 = silu_forward(&z2);
        let p2 = avgpool2_forward(&a2);
        let (mut zm, ctxm) = self.mid.forward(&p2);
        add_channel_bias(&mut zm, &b_mid);
        let am = silu_forward(&zm);
        let u2 = upsample2_forward(&am) + &a2;
        let (mut z3, ctx3) = self.dec2.forward(&u2);
        add_channel_bias(&mut z3, &b_dec2);
        let a3 = silu_forward(&z3);
        let u1 = upsample2_forward(&a3) + &a1;
        let (z4, ctx4) = self.dec1.forward(&u1);
        let a4 = silu_forward(&z4);
        let (eps, ctxo) = self.out.forward(&a4);

        UNetTrace {
            cond_in,
            trunk_z,
            trunk_a,
            z1,
            z2,
            zm,

            z3,
            z4,
            eps,
            ctx1,
            ctx2,
            ctxm,
            ctx3,
            ctx4,
            ctxo,
            ids,
        }
    }

    fn zero_grads(&mut self) {
        self.enc1.zero_grad();
        self.enc2.zero_grad();
        self.mid.zero_grad();
        self.dec2.zero_grad();
        self.dec1.zero_grad();
        self.out.zero_grad();
        self.class_table.zero_grad();
        self.trunk.zero_grad();
        self.head_enc2.zero_grad();
        self.head_mid.zero_grad();
        self.head_dec2.zero_grad();
    }

    fn step_all(&mut self, hp: &AdamParams, t: usize) {
        self.enc1.step(hp, t);
        self.enc2.step(hp, t);
        self.mid.step(hp, t);
        self.dec2.step(hp, t);
        self.dec1.step(hp, t);
        self.out.step(hp, t);
        self.class_table.step(hp, t);
        self.trunk.step(hp, t);
        self.head_enc2.step(hp, t);
        self.head_mid.step(hp, t);
        self.head_dec2.step(hp, t);
    }

    /// Accumulates all parameter gradients for `d loss / d eps`.
    fn backward(&mut self, tr: &UNetTrace, deps: &Array4<f64>) {
        let da4 = self.out.backward(&tr.ctxo, deps);
        let dz4 = silu_backward(&tr.z4, &da4);
        let du1 = self.dec1.backward(&tr.ctx4, &dz4);
        // u1 = upsample(a3) + a1
        let da3 = upsample2_backward(&du1);
        let mut da1 = du1;
        let dz3 = silu_backward(&tr.z3, &da3);
        let db_dec2 = channel_bias_grad(&dz3);
        let du2 = self.dec2.backward(&tr.ctx3, &dz3);
        // u2 = upsample(am) + a2
        let dam = upsample2_backward(&du2);
        let mut da2 = du2;
        let dzm = silu_backward(&tr.zm, &dam);
        let db_mid = channel_bias_grad(&dzm);
        let dp2 = self.mid.backward(&tr.ctxm, &dzm);
        da2 += &avgpool2_backward(&dp2);
        let dz2 = silu_backward(&tr.z2, &da2);
        let db_enc2 = channel_bias_grad(&dz2);
        let dp1 = self.enc2.backward(&tr.ctx2, &dz2);
        da1 += &avgpool2_backward(&dp1);
        let dz1 = silu_backward(&tr.z1, &da1);
        let _ = self.enc1.backward(&tr.ctx1, &dz1);

        // Conditioning path: three heads share the trunk.
        let mut dtrunk_a = self.head_enc2.backward(&tr.trunk_a, &db_enc2);
        dtrunk_a += &self.head_mid.backward(&tr.trunk_a, &db_mid);
        dtrunk_a += &self.head_dec2.backward(&tr.trunk_a, &db_dec2);
        let dtrunk_z = silu2_backward(&tr.trunk_z, &dtrunk_a);
        let dcond = self.trunk.backward(&tr.cond_in, &dtrunk_z);
        // Time-embedding columns are fixed; class columns train the table.
        let dclass = dcond
            .slice(ndarray::s![.., self.emb_dim..2 * self.emb_dim])
            .to_owned();
        self.class_table.backward(&tr.ids, &dclass);
    }

    /// Loss of one fixed batch; drives the finite-difference gradient checks.
    #[cfg(test)]
    fn batch_loss(
        &self,
        x_t: &Array4<f64>,
        ts: &[usize],
        labels: &[Option<usize>],
        eps_true: &Array4<f64>,
    ) -> f64 {
        let tr = self.forward_trace(x_t, ts, labels);
        mse_loss(&tr.eps, eps_true).0
    }

    /// Trains with the standard denoising objective; returns epoch losses.
    pub fn train(
        &mut self,
        data: &[LabeledImage],
        schedule: &crate::schedule::NoiseSchedule,
        cfg: &DenoiserConfig,
    ) -> Result<crate::models::classifier::TrainReport> {
        if data.is_empty() {
            return Err(Error::parameter("empty training split"));
        }
        let hp = AdamParams {
            lr: cfg.learning_rate,
            ..AdamParams::default()
        };
        let mut rng = stream(cfg.seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut report = crate::models::classifier::TrainReport::default();
        let mut step = 0usize;
        let (c, h, w) = self.input;
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            let mut batches = 0usize;
            for chunk in order.chunks(cfg.batch_size) {
                let b = chunk.len();
                let mut x_t = Array4::zeros((b, c, h, w));
                let mut eps_true = Array4::zeros((b, c, h, w));
                let mut ts = Vec::with_capacity(b);
                let mut labels: Vec<Option<usize>> = Vec::with_capacity(b);
                for (bi, &di) in chunk.iter().enumerate() {
                    let t: usize = rng.random_range(1..=schedule.steps());
                    ts.push(t);
                    let keep: f64 = rng.random();
                    labels.push(if keep < cfg.class_dropout {
                        None
                    } else {
                        Some(data[di].label)
                    });
                    let x0 = data[di].image.to_diffusion()?;
                    let ab = schedule.alpha_bar(t)?;
                    let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
                    for ci in 0..c {
                        for yi in 0..h {
                            for xi in 0..w {
                                let e = crate::rng::normal(&mut rng);
                                eps_true[[bi, ci, yi, xi]] = e;
                                x_t[[bi, ci, yi, xi]] = sa * x0.data()[[ci, yi, xi]] + sb * e;
                            }
                        }
                    }
                }
                let tr = self.forward_trace(&x_t, &ts, &labels);
                let (loss, deps) = mse_loss(&tr.eps, &eps_true);
                epoch_loss += loss;
                batches += 1;
                self.zero_grads();
                self.backward(&tr, &deps);
                step += 1;
                self.step_all(&hp, step);
            }
            report.epoch_losses.push(epoch_loss / batches as f64);
        }
        Ok(report)
    }
}

impl DiffusionModelAdapter for CondUNet {
    fn predict_noise(&self, x_t: &ImageTensor, t: usize, label: Option<usize>) -> Result<ImageTensor> {
        x_t.check_range(ValueRange::Diffusion)?;
        if x_t.shape() != self.input {
            return Err(Error::shape(format!(
                "expected {:?}, got {:?}",
                self.input,
                x_t.shape()
            )));
        }
        if t == 0 {
            return Err(Error::parameter("timestep must be >= 1"));
        }
        if let Some(l) = label {
            if l >= self.classes {
                return Err(Error::parameter(format!(
                    "label {l} outside 0..{}",
                    self.classes
                )));
            }
        } else if !self.supports_unconditional() {
            return Err(Error::capability(
                "denoiser was trained without label dropout; no unconditional branch",
            ));
        }
        let (c, h, w) = self.input;
        let mut x = Array4::zeros((1, c, h, w));
        x.index_axis_mut(Axis(0), 0).assign(x_t.data());
        let tr = self.forward_trace(&x, &[t], &[label]);
        Ok(ImageTensor::new(
            tr.eps.index_axis(Axis(0), 0).to_owned(),
            ValueRange::Diffusion,
        ))
    }

    fn shape(&self) -> (usize, usize, usize) {
        self.input
    }

    fn class_count(&self) -> usize {
        self.classes
    }

    fn supports_unconditional(&self) -> bool {
        self.class_dropout > 0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::dataset::{generate, DatasetSpec};
    use crate::schedule::{NoiseSchedule, SigmaMode};

    fn small_cfg() -> DenoiserConfig {
        DenoiserConfig {
            channels: 4,
            emb_dim: 8,
            class_dropout: 0.1,
            epochs: 10,
            batch_size: 10,
            learning_rate: 3e-3,
            seed: 13,
        }
    }

    fn sched() -> NoiseSchedule {
        NoiseSchedule::linear(50, 1e-3, 0.05, SigmaMode::PosteriorSqrt).unwrap()
    }

    #[test]
    fn training_reduces_denoising_loss() {
        let d = generate(&DatasetSpec {
            resolution: 16,
            classes: 3,
            per_class_train: 10,
            per_class_test: 2,
            seed: 4,
        })
        .unwrap();
        let cfg = small_cfg();
        let mut m = CondUNet::new((1, 16, 16), 3, &cfg).unwrap();
        let report = m.train(&d.train, &sched(), &cfg).unwrap();
        let first = report.epoch_losses[0];
        let last = *report.epoch_losses.last().unwrap();
        // Predicting zero noise gives loss 1.0; training must beat that.
        assert!(
            last < first && last < 0.9,
            "losses {:?}",
            report.epoch_losses
        );
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let cfg = small_cfg();
        let m = CondUNet::new((1, 8, 8), 3, &cfg).unwrap();
        let mut r = stream(99);
        let x = Array4::from_shape_fn((2, 1, 8, 8), |_| crate::rng::normal(&mut r));
        let eps = Array4::from_shape_fn((2, 1, 8, 8), |_| crate::rng::normal(&mut r));
        let ts = [3usize, 7];
        let labels = [Some(1usize), None];

        let mut model = m.clone();
        let tr = model.forward_trace(&x, &ts, &labels);
        let (_, deps) = mse_loss(&tr.eps, &eps);
        model.zero_grads();
        model.backward(&tr, &deps);

        let h = 1e-5;
        // One weight from several structurally different parameter groups.
        let probes: Vec<(&str, f64)> = vec![
            ("enc1.w", model.enc1.w.grad[[0, 4]]),
            ("mid.w", model.mid.w.grad[[3, 10]]),
            ("out.b", model.out.b.grad[[0]]),
            ("trunk.w", model.trunk.w.grad[[5, 2]]),
            ("head_mid.w", model.head_mid.w.grad[[1, 3]]),
            ("class_table", model.class_table.table.grad[[1, 2]]),
        ];
        for (name, analytic) in probes {
            let mut mp = m.clone();
            let mut mm = m.clone();
            match name {
                "enc1.w" => {
                    mp.enc1.w.value[[0, 4]] += h;
                    mm.enc1.w.value[[0, 4]] -= h;
                }
                "mid.w" => {
                    mp.mid.w.value[[3, 10]] += h;
                    mm.mid.w.value[[3, 10]] -= h;
                }
                "out.b" => {
                    mp.out.b.value[[0]] += h;
                    mm.out.b.value[[0]] -= h;
                }
                "trunk.w" => {
                    mp.trunk.w.value[[5, 2]] += h;
                    mm.trunk.w.value[[5, 2]] -= h;
                }
                "head_mid.w" => {
                    mp.head_mid.w.value[[1, 3]] += h;
                    mm.head_mid.w.value[[1, 3]] -= h;
                }
                "class_table" => {
                    mp.class_table.table.value[[1, 2]] += h;
                    mm.class_table.table.value[[1, 2]] -= h;
                }
                _ => unreachable!(),
            }
            let fp = mp.batch_loss(&x, &ts, &labels, &eps);
            let fm = mm.batch_loss(&x, &ts, &labels, &eps);
            let fd = (fp - fm) / (2.0 * h);
            assert!(
                (analytic - fd).abs() < 1e-6 * analytic.abs().max(1.0),
                "{name}: analytic {analytic} vs fd {fd}"
            );
        }
    }

    #[test]
    fn conditional_and_unconditional_branches_differ() {
        let cfg = small_cfg();
        let m = CondUNet::new((1, 8, 8), 3, &cfg).unwrap();
        let mut r = stream(5);
        let x = ImageTensor::new(crate::rng::normal_array((1, 8, 8), &mut r), ValueRange::Diffusion);
        let c0 = m.predict_noise(&x, 3, Some(0)).unwrap();
        let c1 = m.predict_noise(&x, 3, Some(1)).unwrap();
        let un = m.predict_noise(&x, 3, None).unwrap();
        assert!(c0.max_abs_diff(&c1).unwrap() > 0.0);
        assert!(c0.max_abs_diff(&un).unwrap() > 0.0);
    }

    #[test]
    fn unconditional_branch_requires_dropout_training() {
        let cfg = DenoiserConfig {
            class_dropout: 0.0,
            ..small_cfg()
        };
        let m = CondUNet::new((1, 8, 8), 3, &cfg).unwrap();
        assert!(!m.supports_unconditional());
        let mut r = stream(6);
        let x = ImageTensor::new(crate::rng::normal_array((1, 8, 8), &mut r), ValueRange::Diffusion);
        assert!(m.predict_noise(&x, 3, None).is_err());
        assert!(m.predict_noise(&x, 3, Some(2)).is_ok());
    }

    #[test]
    fn input_validation_rejects_bad_calls() {
        let cfg = small_cfg();
        let m = CondUNet::new((1, 8, 8), 3, &cfg).unwrap();
        let mut r = stream(7);
        let x = ImageTensor::new(crate::rng::normal_array((1, 8, 8), &mut r), ValueRange::Diffusion);
        assert!(m.predict_noise(&x, 0, Some(0)).is_err());
        assert!(m.predict_noise(&x, 3, Some(9)).is_err());
        let pix = x.to_pixel().unwrap();
        assert!(m.predict_noise(&pix, 3, Some(0)).is_err());
    }
}
