//! Saliency maps over classifier activations.
//!
//! Three methods share a common tail (weighted activation sum, ReLU,
//! upsample, min-max normalize):
//!
//! * ScoreCAM: gradient-free; each channel's weight is the softmax over the
//!   target logits of channel-masked copies of the input.
//! * GradCAM: weights are spatial means of `d logit / d activation`.
//! * GradCAM++: location-dependent second/third-order weighting.
//!
//! The resulting map doubles as the inpainting mask, so values are always
//! normalized into `[0, 1]`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{softmax, ActivationStack, TargetModelAdapter};
use crate::tensor::{ImageTensor, ValueRange};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaliencyMethod {
    ScoreCam,
    GradCam,
    GradCamPp,
}

/// Resolution at which weighted activations are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineSpace {
    /// Combine at activation resolution, then upsample (default).
    Feature,
    /// Upsample each channel first, then combine.
    Image,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SaliencySettings {
    pub method: SaliencyMethod,
    pub layer: String,
    pub combine: CombineSpace,
}

/// A normalized saliency map plus the metadata needed to reproduce it.
#[derive(Clone, Debug)]
pub struct SaliencyMap {
    map: Array2<f64>,
    pub method: SaliencyMethod,
    pub layer: String,
    pub class: usize,
    /// Min/max of the combined map before normalization.
    pub norm_min: f64,
    pub norm_max: f64,
    /// Model evaluation counts incurred while computing the map.
    pub forward_calls: usize,
    pub gradient_calls: usize,
}

impl SaliencyMap {
    /// Values in `[0, 1]`, shaped `[height, width]` of the input image.
    pub fn map(&self) -> &Array2<f64> {
        &self.map
    }
}

/// Corner-aligned bilinear resampling of a 2-D map.
///
/// Output corners sample input corners exactly; a singleton input dimension
/// broadcasts as a constant.
pub fn upsample_bilinear(map: &Array2<f64>, out_h: usize, out_w: usize) -> Result<Array2<f64>> {
    let (in_h, in_w) = (map.nrows(), map.ncols());
    if in_h == 0 || in_w == 0 || out_h == 0 || out_w == 0 {
        return Err(Error::parameter("upsample dimensions must be >= 1"));
    }
    let scale = |inn: usize, out: usize| -> f64 {
        if out > 1 && inn > 1 {
            (inn - 1) as f64 / (out - 1) as f64
        } else {
            0.0
        }
    };
    let sy = scale(in_h, out_h);
    let sx = scale(in_w, out_w);
    let mut out = Array2::zeros((out_h, out_w));
    for oy in 0..out_h {
        let fy = oy as f64 * sy;
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(in_h - 1);
        let dy = fy - y0 as f64;
        for ox in 0..out_w {
            let fx = ox as f64 * sx;
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(in_w - 1);
            let dx = fx - x0 as f64;
            let top = map[[y0, x0]] * (1.0 - dx) + map[[y0, x1]] * dx;
            let bot = map[[y1, x0]] * (1.0 - dx) + map[[y1, x1]] * dx;
            out[[oy, ox]] = top * (1.0 - dy) + bot * dy;
        }
    }
    Ok(out)
}

/// Min-max normalization onto `[0, 1]`; a constant map becomes all zeros.
///
/// Returns `(normalized, min, max)` so callers can record the bounds.
pub fn minmax_normalize(map: &Array2<f64>) -> (Array2<f64>, f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in map.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !(hi > lo) {
        return (Array2::zeros(map.raw_dim()), lo, hi);
    }
    let span = hi - lo;
    (map.mapv(|v| (v - lo) / span), lo, hi)
}

fn check_class(model: &dyn TargetModelAdapter, class: usize) -> Result<()> {
    if class >= model.class_count() {
        return Err(Error::parameter(format!(
            "class {} outside 0..{}",
            class,
            model.class_count()
        )));
    }
    Ok(())
}

/// Weighted combination, ReLU, upsample, normalize.
fn combine(
    acts: &ActivationStack,
    weights: &[f64],
    out_h: usize,
    out_w: usize,
    combine: CombineSpace,
) -> Result<(Array2<f64>, f64, f64)> {
    let (k, h, w) = (acts.shape()[0], acts.shape()[1], acts.shape()[2]);
    if weights.len() != k {
        return Err(Error::shape(format!(
            "{} weights for {} channels",
            weights.len(),
            k
        )));
    }
    let raw = match combine {
        CombineSpace::Feature => {
            let mut sum: Array2<f64> = Array2::zeros((h, w));
            for ki in 0..k {
                for yi in 0..h {
                    for xi in 0..w {
                        sum[[yi, xi]] += weights[ki] * acts[[ki, yi, xi]];
                    }
                }
            }
            sum.mapv_inplace(|v| v.max(0.0));
            upsample_bilinear(&sum, out_h, out_w)?
        }
        CombineSpace::Image => {
            let mut sum: Array2<f64> = Array2::zeros((out_h, out_w));
            for ki in 0..k {
                let plane = acts.index_axis(ndarray::Axis(0), ki).to_owned();
                let up = upsample_bilinear(&plane, out_h, out_w)?;
                sum.zip_mut_with(&up, |s, &u| *s += weights[ki] * u);
            }
            sum.mapv_inplace(|v| v.max(0.0));
            sum
        }
    };
    let (norm, lo, hi) = minmax_normalize(&raw);
    Ok((norm, lo, hi))
}

/// ScoreCAM. Gradient-free: works on forward-only adapters.
pub fn score_cam(
    model: &dyn TargetModelAdapter,
    x: &ImageTensor,
    class: usize,
    layer: &str,
    space: CombineSpace,
) -> Result<SaliencyMap> {
    check_class(model, class)?;
    x.check_range(ValueRange::Pixel)?;
    let acts = model.activations(x, layer)?;
    let k = acts.shape()[0];
    if k == 0 {
        return Err(Error::shape("activation stack has no channels"));
    }
    let (c, h, w) = x.shape();
    let mut scores = Vec::with_capacity(k);
    for ki in 0..k {
        let plane = acts.index_axis(ndarray::Axis(0), ki).to_owned();
        let up = upsample_bilinear(&plane, h, w)?;
        let (mask, _, _) = minmax_normalize(&up);
        let mut masked = x.clone();
        for ci in 0..c {
            for yi in 0..h {
                for xi in 0..w {
                    masked.data_mut()[[ci, yi, xi]] = x.data()[[ci, yi, xi]] * mask[[yi, xi]];
                }
            }
        }
        scores.push(model.logits(&masked)?[class]);
    }
    let weights = softmax(&scores);
    let (map, lo, hi) = combine(&acts, &weights, h, w, space)?;
    Ok(SaliencyMap {
        map,
        method: SaliencyMethod::ScoreCam,
        layer: layer.to_string(),
        class,
        norm_min: lo,
        norm_max: hi,
        forward_calls: k + 1,
        gradient_calls: 0,
    })
}

/// GradCAM: channel weights are spatial means of the activation gradient.
pub fn grad_cam(
    model: &dyn TargetModelAdapter,
    x: &ImageTensor,
    class: usize,
    layer: &str,
    space: CombineSpace,
) -> Result<SaliencyMap> {
    check_class(model, class)?;
    x.check_range(ValueRange::Pixel)?;
    let acts = model.activations(x, layer)?;
    let grads = model.grad_logit_wrt_activations(x, class, layer)?;
    if acts.shape() != grads.shape() {
        return Err(Error::shape("activation and gradient shapes differ"));
    }
    let (k, fh, fw) = (acts.shape()[0], acts.shape()[1], acts.shape()[2]);
    let area = (fh * fw) as f64;
    let weights: Vec<f64> = (0..k)
        .map(|ki| grads.index_axis(ndarray::Axis(0), ki).sum() / area)
        .collect();
    let (_, h, w) = x.shape();
    let (map, lo, hi) = combine(&acts, &weights, h, w, space)?;
    Ok(SaliencyMap {
        map,
        method: SaliencyMethod::GradCam,
        layer: layer.to_string(),
        class,
        norm_min: lo,
        norm_max: hi,
        forward_calls: 1,
        gradient_calls: 1,
    })
}

/// GradCAM++: per-location weights
/// `alpha = g^2 / (2 g^2 + sum(A) g^3)`, channel weight
/// `w_k = sum_ij alpha_ij * relu(g_ij)`.
pub fn grad_cam_pp(
    model: &dyn TargetModelAdapter,
    x: &ImageTensor,
    class: usize,
    layer: &str,
    space: CombineSpace,
) -> Result<SaliencyMap> {
    check_class(model, class)?;
    x.check_range(ValueRange::Pixel)?;
    let acts = model.activations(x, layer)?;
    let grads = model.grad_logit_wrt_activations(x, class, layer)?;
    if acts.shape() != grads.shape() {
        return Err(Error::shape("activation and gradient shapes differ"));
    }
    let (k, fh, fw) = (acts.shape()[0], acts.shape()[1], acts.shape()[2]);
    let mut weights = vec![0.0; k];
    for ki in 0..k {
        let a = acts.index_axis(ndarray::Axis(0), ki);
        let g = grads.index_axis(ndarray::Axis(0), ki);
        let a_sum: f64 = a.sum();
        let mut wk = 0.0;
        for yi in 0..fh {
            for xi in 0..fw {
                let gv = g[[yi, xi]];
                let g2 = gv * gv;
                let denom = 2.0 * g2 + a_sum * g2 * gv;
                let alpha = if denom.abs() < 1e-12 { 0.0 } else { g2 / denom };
                wk += alpha * gv.max(0.0);
            }
        }
        weights[ki] = wk;
    }
    let (_, h, w) = x.shape();
    let (map, lo, hi) = combine(&acts, &weights, h, w, space)?;
    Ok(SaliencyMap {
        map,
        method: SaliencyMethod::GradCamPp,
        layer: layer.to_string(),
        class,
        norm_min: lo,
        norm_max: hi,
        forward_calls: 1,
        gradient_calls: 1,
    })
}

/// Dispatches on the configured method.
pub fn compute_saliency(
    model: &dyn TargetModelAdapter,
    x: &ImageTensor,
    class: usize,
    settings: &SaliencySettings,
) -> Result<SaliencyMap> {
    match settings.method {
        SaliencyMethod::ScoreCam => score_cam(model, x, class, &settings.layer, settings.combine),
        SaliencyMethod::GradCam => grad_cam(model, x, class, &settings.layer, settings.combine),
        SaliencyMethod::GradCamPp => grad_cam_pp(model, x, class, &settings.layer, settings.combine),
    }
}
