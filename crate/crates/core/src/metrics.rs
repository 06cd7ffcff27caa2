//! Attack evaluation metrics.
//!
//! Success rates and transfer matrices measure efficacy; PSNR and SSIM
//! measure closeness to a baseline image; a feature-space Fréchet distance
//! (over a frozen toy-classifier feature layer) stands in for perceptual
//! realism at desk scale.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::TargetModelAdapter;
use crate::tensor::{ImageTensor, ValueRange};

/// Fraction of successful attacks; errors on an empty input.
pub fn attack_success_rate<I>(successes: I) -> Result<f64>
where
    I: IntoIterator<Item = bool>,
{
    let mut hits = 0usize;
    let mut total = 0usize;
    for s in successes {
        total += 1;
        if s {
            hits += 1;
        }
    }
    if total == 0 {
        return Err(Error::parameter("success rate of an empty set"));
    }
    Ok(hits as f64 / total as f64)
}

/// Half-width of the normal-approximation confidence interval for a
/// difference of two independent proportions.
pub fn binomial_diff_ci_half_width(p1: f64, n1: usize, p2: f64, n2: usize, z: f64) -> Result<f64> {
    if n1 == 0 || n2 == 0 {
        return Err(Error::parameter("confidence interval needs n >= 1"));
    }
    let v1 = p1 * (1.0 - p1) / n1 as f64;
    let v2 = p2 * (1.0 - p2) / n2 as f64;
    Ok(z * (v1 + v2).sqrt())
}

/// Peak signal-to-noise ratio between pixel-range images, in dB.
/// Identical images yield positive infinity.
pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    a.check_range(ValueRange::Pixel)?;
    b.check_range(ValueRange::Pixel)?;
    let mse = a.mse(b)?;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Valid-mode separable Gaussian filter of one channel.
fn gauss_filter(plane: &Array2<f64>) -> Array2<f64> {
    let k = gaussian_kernel();
    let (h, w) = plane.dim();
    let oh = h - SSIM_WINDOW + 1;
    let ow = w - SSIM_WINDOW + 1;
    // Rows first.
    let mut tmp = Array2::zeros((h, ow));
    for y in 0..h {
        for x in 0..ow {
            let mut s = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                s += kv * plane[[y, x + i]];
            }
            tmp[[y, x]] = s;
        }
    }
    let mut out = Array2::zeros((oh, ow));
    for y in 0..oh {
        for x in 0..ow {
            let mut s = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                s += kv * tmp[[y + i, x]];
            }
            out[[y, x]] = s;
        }
    }
    out
}

/// Mean structural similarity between pixel-range images.
///
/// 11x11 Gaussian window (sigma 1.5), k1 = 0.01, k2 = 0.03, dynamic range 1.
/// Channels are averaged; spatial dims must be at least the window size.
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    a.check_range(ValueRange::Pixel)?;
    b.check_range(ValueRange::Pixel)?;
    a.check_compatible(b)?;
    let (c, h, w) = a.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::parameter(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images"
        )));
    }
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let mut total = 0.0;
    for ci in 0..c {
        let pa = a.data().index_axis(Axis(0), ci).to_owned();
        let pb = b.data().index_axis(Axis(0), ci).to_owned();
        let mu_a = gauss_filter(&pa);
        let mu_b = gauss_filter(&pb);
        let aa = gauss_filter(&(&pa * &pa));
        let bb = gauss_filter(&(&pb * &pb));
        let ab = gauss_filter(&(&pa * &pb));
        let mut acc = 0.0;
        let (oh, ow) = mu_a.dim();
        for y in 0..oh {
            for x in 0..ow {
                let ma = mu_a[[y, x]];
                let mb = mu_b[[y, x]];
                let va = aa[[y, x]] - ma * ma;
                let vb = bb[[y, x]] - mb * mb;
                let cov = ab[[y, x]] - ma * mb;
                acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            }
        }
        total += acc / (oh * ow) as f64;
    }
    Ok(total / c as f64)
}

/// Extracts a fixed-length feature vector from a pixel-range image.
/// The toy conv classifier implements this with its penultimate layer.
pub trait FeatureExtractor: Sync {
    fn id(&self) -> &str;
    fn feature_dim(&self) -> usize;
    fn features(&self, x: &ImageTensor) -> Result<Vec<f64>>;
}

/// Cyclic Jacobi eigensolver for a symmetric matrix. Returns eigenvalues
/// (unsorted) and the orthogonal eigenvector matrix (columns).
pub fn symmetric_eig(mat: &ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = mat.nrows();
    if mat.ncols() != n {
        return Err(Error::shape("eigensolver needs a square matrix"));
    }
    let mut a = mat.to_owned();
    let mut v = Array2::eye(n);
    let frob: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = 1e-14 * frob.max(1e-300);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[[i, j]] * a[[i, j]];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq.abs() <= tol / (n as f64) {
                    continue;
                }
                let app = a[[p, p]];
                let aqq = a[[q, q]];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    Ok((a.diag().to_owned(), v))
}

/// Symmetric positive-semidefinite square root via the eigendecomposition;
/// tiny negative eigenvalues from roundoff are clipped to zero.
fn sqrt_psd(mat: &Array2<f64>) -> Result<Array2<f64>> {
    let (vals, vecs) = symmetric_eig(&mat.view())?;
    let n = vals.len();
    let mut out = Array2::zeros((n, n));
    for k in 0..n {
        let s = vals[k].max(0.0).sqrt();
        for i in 0..n {
            for j in 0..n {
                out[[i, j]] += s * vecs[[i, k]] * vecs[[j, k]];
            }
        }
    }
    Ok(out)
}

/// Sample mean and unbiased covariance of rows.
fn mean_cov(feats: &ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = feats.nrows();
    let d = feats.ncols();
    if n < 2 {
        return Err(Error::parameter("covariance needs at least 2 samples"));
    }
    let mean = feats.mean_axis(Axis(0)).expect("n >= 2");
    let mut cov = Array2::zeros((d, d));
    for row in feats.rows() {
        let c: Array1<f64> = &row - &mean;
        for i in 0..d {
            for j in 0..d {
                cov[[i, j]] += c[i] * c[j];
            }
        }
    }
    cov /= (n - 1) as f64;
    Ok((mean, cov))
}

const COV_REGULARIZER: f64 = 1e-6;

/// Fréchet distance between the Gaussian fits of two feature row-sets:
/// `||mu1 - mu2||^2 + tr(C1 + C2 - 2 (C1^{1/2} C2 C1^{1/2})^{1/2})`.
///
/// Both covariances receive `+ 1e-6 I` so singular fits stay computable.
pub fn frechet_distance(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Result<f64> {
    if a.ncols() != b.ncols() {
        return Err(Error::shape("feature dimensions differ"));
    }
    let (m1, mut c1) = mean_cov(a)?;
    let (m2, mut c2) = mean_cov(b)?;
    let d = c1.nrows();
    for i in 0..d {
        c1[[i, i]] += COV_REGULARIZER;
        c2[[i, i]] += COV_REGULARIZER;
    }
    let mean_term: f64 = (&m1 - &m2).iter().map(|v| v * v).sum();
    let s1 = sqrt_psd(&c1)?;
    let inner = s1.dot(&c2).dot(&s1);
    // Symmetrize against roundoff before the second square root.
    let inner = (&inner + &inner.t()) / 2.0;
    let (vals, _) = symmetric_eig(&inner.view())?;
    let tr_sqrt: f64 = vals.iter().map(|&v| v.max(0.0).sqrt()).sum();
    let tr1: f64 = c1.diag().sum();
    let tr2: f64 = c2.diag().sum();
    Ok(mean_term + tr1 + tr2 - 2.0 * tr_sqrt)
}

pub const FID_MIN_IMAGES: usize = 50;

/// Feature-space Fréchet distance between two image sets through a frozen
/// extractor. Requires at least [`FID_MIN_IMAGES`] images per side.
pub fn desk_fid(
    set_a: &[ImageTensor],
    set_b: &[ImageTensor],
    extractor: &dyn FeatureExtractor,
) -> Result<f64> {
    if set_a.len() < FID_MIN_IMAGES || set_b.len() < FID_MIN_IMAGES {
        return Err(Error::parameter(format!(
            "feature distance needs >= {FID_MIN_IMAGES} images per side, got {} and {}",
            set_a.len(),
            set_b.len()
        )));
    }
    let d = extractor.feature_dim();
    let embed = |set: &[ImageTensor]| -> Result<Array2<f64>> {
        let mut out = Array2::zeros((set.len(), d));
        for (i, img) in set.iter().enumerate() {
            let f = extractor.features(img)?;
            if f.len() != d {
                return Err(Error::shape("extractor returned wrong feature width"));
            }
            for (j, v) in f.into_iter().enumerate() {
                out[[i, j]] = v;
            }
        }
        Ok(out)
    };
    let fa = embed(set_a)?;
    let fb = embed(set_b)?;
    frechet_distance(&fa.view(), &fb.view())
}

/// One adversarial image and the class it was pushed toward.
#[derive(Clone, Debug)]
pub struct TransferCase {
    pub image: ImageTensor,
    pub target_class: usize,
}

/// Success rates of each surrogate's images against each target model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransferMatrixResult {
    pub surrogates: Vec<String>,
    pub targets: Vec<String>,
    /// `rates[i][j]`: surrogate `i` images scored on target `j`.
    pub rates: Vec<Vec<f64>>,
    pub cases_per_surrogate: Vec<usize>,
}

impl TransferMatrixResult {
    pub fn is_white_box(&self, i: usize, j: usize) -> bool {
        self.surrogates[i] == self.targets[j]
    }
}

/// Scores per-surrogate image sets against every target model.
pub fn transfer_matrix(
    cases_by_surrogate: &[(String, Vec<TransferCase>)],
    targets: &[&dyn TargetModelAdapter],
) -> Result<TransferMatrixResult> {
    if cases_by_surrogate.is_empty() || targets.is_empty() {
        return Err(Error::parameter("transfer matrix needs surrogates and targets"));
    }
    let mut rates = Vec::with_capacity(cases_by_surrogate.len());
    let mut counts = Vec::with_capacity(cases_by_surrogate.len());
    for (name, cases) in cases_by_surrogate {
        if cases.is_empty() {
            return Err(Error::parameter(format!("no cases for surrogate {name}")));
        }
        counts.push(cases.len());
        let mut row = Vec::with_capacity(targets.len());
        for target in targets {
            let mut hits = 0usize;
            for case in cases {
                if target.predict(&case.image)? == case.target_class {
                    hits += 1;
                }
            }
            row.push(hits as f64 / cases.len() as f64);
        }
        rates.push(row);
    }
    Ok(TransferMatrixResult {
        surrogates: cases_by_surrogate.iter().map(|(n, _)| n.clone()).collect(),
        targets: targets.iter().map(|t| t.id().to_string()).collect(),
        rates,
        cases_per_surrogate: counts,
    })
}
