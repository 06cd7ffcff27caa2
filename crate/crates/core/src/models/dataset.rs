//! Procedural ten-class shape dataset.
//!
//! Grayscale images of parameterized geometric figures (disk, ring, square,
//! frame, plus, cross, stripes, checkerboard, triangle) with randomized
//! position, size, rotation, stroke width, contrast, edge softness, and
//! pixel noise. The randomization ranges deliberately bring classes close
//! together (a thick soft ring approaches a disk, a rotated plus approaches
//! the diagonal cross) so that classifier decision boundaries sit near the
//! data manifold, as they do for the large-scale models this toolkit
//! imitates. Generation is fully deterministic in the seed, and a SHA-256
//! checksum over the quantized images pins dataset identity in run
//! manifests.

use ndarray::Array3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{child_stream, normal};
use crate::tensor::{ImageTensor, ValueRange};

pub const CLASS_COUNT: usize = 10;

pub const CLASS_NAMES: [&str; CLASS_COUNT] = [
    "disk",
    "ring",
    "square",
    "frame",
    "plus",
    "cross",
    "h_stripes",
    "v_stripes",
    "checker",
    "triangle",
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub resolution: usize,
    pub classes: usize,
    pub per_class_train: usize,
    pub per_class_test: usize,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            resolution: 32,
            classes: CLASS_COUNT,
            per_class_train: 300,
            per_class_test: 60,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LabeledImage {
    pub image: ImageTensor,
    pub label: usize,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub train: Vec<LabeledImage>,
    pub test: Vec<LabeledImage>,
    pub checksum: String,
}

impl Dataset {
    /// Images of one class from the test split.
    pub fn test_of_class(&self, label: usize) -> Vec<&LabeledImage> {
        self.test.iter().filter(|s| s.label == label).collect()
    }
}

/// Signed distance to a convex polygon given counter-clockwise vertices;
/// negative inside.
fn convex_sdf(px: f64, py: f64, verts: &[(f64, f64)]) -> f64 {
    let mut d = f64::NEG_INFINITY;
    let n = verts.len();
    for i in 0..n {
        let (ax, ay) = verts[i];
        let (bx, by) = verts[(i + 1) % n];
        // Outward normal of edge a->b for CCW order.
        let (ex, ey) = (bx - ax, by - ay);
        let len = (ex * ex + ey * ey).sqrt();
        let (nx, ny) = (ey / len, -ex / len);
        d = d.max((px - ax) * nx + (py - ay) * ny);
    }
    d
}

/// Linear edge ramp: full coverage at `d <= -w/2`, none at `d >= w/2`.
fn coverage(d: f64, w: f64) -> f64 {
    (0.5 - d / w).clamp(0.0, 1.0)
}

/// Renders one image of the given class using draws from `rng`.
pub fn render_class(class: usize, resolution: usize, rng: &mut ChaCha8Rng) -> Result<ImageTensor> {
    if class >= CLASS_COUNT {
        return Err(Error::parameter(format!(
            "class {class} outside 0..{CLASS_COUNT}"
        )));
    }
    if resolution < 8 {
        return Err(Error::parameter("resolution must be >= 8"));
    }
    let res = resolution as f64;
    let bg: f64 = rng.random_range(0.05..0.40);
    let fg: f64 = (bg + rng.random_range(0.18..0.60)).min(0.95);
    let cx: f64 = res / 2.0 + rng.random_range(-0.12..0.12) * res;
    let cy: f64 = res / 2.0 + rng.random_range(-0.12..0.12) * res;
    let r: f64 = rng.random_range(0.18..0.38) * res;
    let width: f64 = r * rng.random_range(0.28..0.75);
    let period: f64 = rng.random_range(0.18..0.34) * res;
    let phase: f64 = rng.random_range(0.0..1.0) * period;
    let phase2: f64 = rng.random_range(0.0..1.0) * period;
    let theta: f64 = rng.random_range(-0.35..0.35);
    let noise_level: f64 = rng.random_range(0.02..0.08);
    let edge: f64 = rng.random_range(0.030..0.110) * res;
    let (sin_t, cos_t) = theta.sin_cos();

    let mut data = Array3::zeros((1, resolution, resolution));
    for yi in 0..resolution {
        for xi in 0..resolution {
            let px = xi as f64 + 0.5;
            let py = yi as f64 + 0.5;
            // Sample coordinates in the shape's rotated frame.
            let dx = (px - cx) * cos_t + (py - cy) * sin_t;
            let dy = (py - cy) * cos_t - (px - cx) * sin_t;
            let alpha = match class {
                // disk
                0 => coverage((dx * dx + dy * dy).sqrt() - r, edge),
                // ring
                1 => coverage(((dx * dx + dy * dy).sqrt() - r).abs() - width, edge),
                // square
                2 => coverage(dx.abs().max(dy.abs()) - r, edge),
                // frame
                3 => coverage((dx.abs().max(dy.abs()) - r).abs() - width, edge),
                // plus
                4 => {
                    let h = (dx.abs() - r).max(dy.abs() - width);
                    let v = (dy.abs() - r).max(dx.abs() - width);
                    coverage(h.min(v), edge)
                }
                // diagonal cross
                5 => {
                    let inv = std::f64::consts::FRAC_1_SQRT_2;
                    let u = (dx + dy) * inv;
                    let v = (dx - dy) * inv;
                    let a = (u.abs() - r).max(v.abs() - width);
                    let b = (v.abs() - r).max(u.abs() - width);
                    coverage(a.min(b), edge)
                }
                // horizontal stripes
                6 => {
                    let s = (std::f64::consts::TAU * (dy + phase) / period).sin();
                    coverage(-s * period / std::f64::consts::TAU, edge)
                }
                // vertical stripes
                7 => {
                    let s = (std::f64::consts::TAU * (dx + phase) / period).sin();
                    coverage(-s * period / std::f64::consts::TAU, edge)
                }
                // checkerboard
                8 => {
                    let sx = (std::f64::consts::TAU * (dx + phase) / period).sin();
                    let sy = (std::f64::consts::TAU * (dy + phase2) / period).sin();
                    coverage(-sx * sy * period / std::f64::consts::TAU, edge)
                }
                // triangle
                9 => {
                    let verts = [(0.0, -r), (-0.9 * r, 0.72 * r), (0.9 * r, 0.72 * r)];
                    coverage(convex_sdf(dx, dy, &verts), edge)
                }
                _ => unreachable!(),
            };
            data[[0, yi, xi]] = bg + (fg - bg) * alpha;
        }
    }
    // Mild pixel noise, clamped back into range.
    for v in data.iter_mut() {
        *v = (*v + noise_level * normal(rng)).clamp(0.0, 1.0);
    }
    Ok(ImageTensor::new(data, ValueRange::Pixel))
}

fn generate_split(
    spec: &DatasetSpec,
    per_class: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<LabeledImage>> {
    let mut out = Vec::with_capacity(per_class * spec.classes);
    for class in 0..spec.classes {
        for _ in 0..per_class {
            out.push(LabeledImage {
                image: render_class(class, spec.resolution, rng)?,
                label: class,
            });
        }
    }
    Ok(out)
}

/// 8-bit quantization used for hashing and PNG export: round-half-up.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn hash_split(hasher: &mut Sha256, split: &[LabeledImage]) {
    for s in split {
        hasher.update([s.label as u8]);
        for &v in s.image.data().iter() {
            hasher.update([quantize(v)]);
        }
    }
}

/// Generates the dataset and its identity checksum.
pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    if spec.classes == 0 || spec.classes > CLASS_COUNT {
        return Err(Error::parameter(format!(
            "classes must be in 1..={CLASS_COUNT}"
        )));
    }
    if spec.per_class_train == 0 {
        return Err(Error::parameter("per_class_train must be >= 1"));
    }
    let mut train_rng = child_stream(spec.seed, 0);
    let mut test_rng = child_stream(spec.seed, 1);
    let train = generate_split(spec, spec.per_class_train, &mut train_rng)?;
    let test = generate_split(spec, spec.per_class_test, &mut test_rng)?;
    let mut hasher = Sha256::new();
    hash_split(&mut hasher, &train);
    hash_split(&mut hasher, &test);
    let checksum: String = hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    Ok(Dataset {
        spec: *spec,
        train,
        test,
        checksum,
    })
}
