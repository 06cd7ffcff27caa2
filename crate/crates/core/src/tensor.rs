//! Image tensors with an explicit value-range tag.
//!
//! Diffusion math lives in `[-1, 1]`; classifiers, metrics, and PNG I/O live
//! in `[0, 1]`. Mixing the two silently is the classic bug in this kind of
//! pipeline, so the range rides along as a tag and conversions are explicit.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Value convention of an image tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ValueRange {
    /// Diffusion convention, nominal range `[-1, 1]`.
    Diffusion,
    /// Pixel convention, range `[0, 1]`.
    Pixel,
}

/// A `[channels, height, width]` image with a value-range tag.
///
/// Intermediate diffusion states may wander outside the nominal range;
/// a `Pixel` tag is only ever applied after clamping.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    data: Array3<f64>,
    range: ValueRange,
}

impl ImageTensor {
    pub fn new(data: Array3<f64>, range: ValueRange) -> Self {
        ImageTensor { data, range }
    }

    pub fn zeros(shape: (usize, usize, usize), range: ValueRange) -> Self {
        ImageTensor {
            data: Array3::zeros(shape),
            range,
        }
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array3<f64> {
        &mut self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    pub fn range(&self) -> ValueRange {
        self.range
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        let s = self.data.shape();
        (s[0], s[1], s[2])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Errors unless both tensors share shape and range.
    pub fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!(
                "tensor shapes differ: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        if self.range != other.range {
            return Err(Error::parameter(format!(
                "tensor ranges differ: {:?} vs {:?}",
                self.range, other.range
            )));
        }
        Ok(())
    }

    /// Errors unless the tensor carries the expected range tag.
    pub fn check_range(&self, range: ValueRange) -> Result<()> {
        if self.range != range {
            return Err(Error::parameter(format!(
                "expected {:?}-range tensor, got {:?}",
                range, self.range
            )));
        }
        Ok(())
    }

    /// Elementwise map, keeping the range tag.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        ImageTensor {
            data: self.data.mapv(&f),
            range: self.range,
        }
    }

    /// `self + scale * other`. Both operands must be compatible.
    pub fn add_scaled(&self, other: &Self, scale: f64) -> Result<Self> {
        self.check_compatible(other)?;
        let mut data = self.data.clone();
        data.zip_mut_with(&other.data, |a, &b| *a += scale * b);
        Ok(ImageTensor {
            data,
            range: self.range,
        })
    }

    /// `a * self + b * other`. Both operands must be compatible.
    pub fn linear_comb(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        self.check_compatible(other)?;
        let mut data = self.data.clone();
        data.zip_mut_with(&other.data, |x, &y| *x = a * *x + b * y);
        Ok(ImageTensor {
            data,
            range: self.range,
        })
    }

    /// Clamps a diffusion-range tensor to `[-1, 1]`.
    pub fn clamp_diffusion(&self) -> Result<Self> {
        self.check_range(ValueRange::Diffusion)?;
        Ok(self.map(|v| v.clamp(-1.0, 1.0)))
    }

    /// Clamps diffusion values to `[-1, 1]` and maps them onto `[0, 1]`.
    pub fn to_pixel(&self) -> Result<Self> {
        self.check_range(ValueRange::Diffusion)?;
        Ok(ImageTensor {
            data: self.data.mapv(|v| (v.clamp(-1.0, 1.0) + 1.0) * 0.5),
            range: ValueRange::Pixel,
        })
    }

    /// Maps pixel values onto the diffusion range by `2x - 1`.
    pub fn to_diffusion(&self) -> Result<Self> {
        self.check_range(ValueRange::Pixel)?;
        Ok(ImageTensor {
            data: self.data.mapv(|v| 2.0 * v - 1.0),
            range: ValueRange::Diffusion,
        })
    }

    /// Mean squared difference against another tensor of the same shape.
    pub fn mse(&self, other: &Self) -> Result<f64> {
        self.check_compatible(other)?;
        let n = self.data.len() as f64;
        let mut acc = 0.0;
        for (a, b) in self.data.iter().zip(other.data.iter()) {
            let d = a - b;
            acc += d * d;
        }
        Ok(acc / n)
    }

    /// Maximum absolute difference against another tensor of the same shape.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.check_compatible(other)?;
        let mut m: f64 = 0.0;
        for (a, b) in self.data.iter().zip(other.data.iter()) {
            m = m.max((a - b).abs());
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn filled(shape: (usize, usize, usize), v: f64, range: ValueRange) -> ImageTensor {
        ImageTensor::new(Array3::from_elem(shape, v), range)
    }

    #[test]
    fn pixel_diffusion_round_trip_is_exact_inside_range() {
        let x = filled((1, 4, 4), 0.25, ValueRange::Pixel);
        let back = x.to_diffusion().unwrap().to_pixel().unwrap();
        assert_eq!(x, back);
    }

    #[test]
    fn to_pixel_clamps_out_of_range_values() {
        let x = filled((1, 2, 2), 3.5, ValueRange::Diffusion);
        let p = x.to_pixel().unwrap();
        for &v in p.data().iter() {
            assert_relative_eq!(v, 1.0);
        }
    }

    #[test]
    fn range_mismatch_is_rejected() {
        let a = filled((1, 2, 2), 0.0, ValueRange::Pixel);
        let b = filled((1, 2, 2), 0.0, ValueRange::Diffusion);
        assert!(a.add_scaled(&b, 1.0).is_err());
        assert!(a.to_pixel().is_err());
        assert!(b.to_diffusion().is_err());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = filled((1, 2, 2), 0.0, ValueRange::Pixel);
        let b = filled((1, 2, 3), 0.0, ValueRange::Pixel);
        assert!(a.mse(&b).is_err());
    }

    #[test]
    fn linear_comb_matches_manual() {
        let a = filled((1, 2, 2), 2.0, ValueRange::Diffusion);
        let b = filled((1, 2, 2), -1.0, ValueRange::Diffusion);
        let c = a.linear_comb(0.5, &b, 2.0).unwrap();
        for &v in c.data().iter() {
            assert_relative_eq!(v, 0.5 * 2.0 + 2.0 * (-1.0));
        }
    }
}
