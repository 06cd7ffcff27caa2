//! Central-difference gradient checks.
//!
//! Used to validate every analytic input gradient in the crate against an
//! independent numerical estimate.

use crate::error::Result;
use crate::tensor::ImageTensor;

/// Central finite-difference gradient of a scalar function at `x`.
///
/// Perturbs one element at a time by `+/- h`, so cost is `2 * len(x)`
/// function evaluations.
pub fn finite_diff_grad(
    f: &dyn Fn(&ImageTensor) -> Result<f64>,
    x: &ImageTensor,
    h: f64,
) -> Result<ImageTensor> {
    let mut grad = ImageTensor::zeros(x.shape(), x.range());
    let (c, hh, ww) = x.shape();
    for ci in 0..c {
        for yi in 0..hh {
            for xi in 0..ww {
                let mut plus = x.clone();
                plus.data_mut()[[ci, yi, xi]] += h;
                let mut minus = x.clone();
                minus.data_mut()[[ci, yi, xi]] -= h;
                grad.data_mut()[[ci, yi, xi]] = (f(&plus)? - f(&minus)?) / (2.0 * h);
            }
        }
    }
    Ok(grad)
}

/// Relative error between an analytic gradient and its finite-difference
/// estimate: `||g - g_fd|| / max(||g||, ||g_fd||, floor)`.
pub fn grad_relative_error(analytic: &ImageTensor, numeric: &ImageTensor) -> Result<f64> {
    analytic.check_compatible(numeric)?;
    let mut diff2 = 0.0;
    let mut na2 = 0.0;
    let mut nn2 = 0.0;
    for (a, b) in analytic.data().iter().zip(numeric.data().iter()) {
        diff2 += (a - b) * (a - b);
        na2 += a * a;
        nn2 += b * b;
    }
    let denom = na2.sqrt().max(nn2.sqrt()).max(1e-12);
    Ok(diff2.sqrt() / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ValueRange;
    use ndarray::Array3;

    #[test]
    fn finite_diff_recovers_quadratic_gradient() {
        // f(x) = sum(x^2) has gradient 2x.
        let x = ImageTensor::new(
            Array3::from_shape_fn((1, 2, 3), |(_, i, j)| 0.1 * (i as f64 + 1.0) - 0.2 * j as f64),
            ValueRange::Pixel,
        );
        let f = |t: &ImageTensor| -> crate::error::Result<f64> {
            Ok(t.data().iter().map(|v| v * v).sum())
        };
        let fd = finite_diff_grad(&f, &x, 1e-5).unwrap();
        let analytic = x.map(|v| 2.0 * v);
        assert!(grad_relative_error(&analytic, &fd).unwrap() < 1e-8);
    }
}
