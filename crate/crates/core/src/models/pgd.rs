//! Norm-bounded PGD baseline.
//!
//! Targeted L-infinity projected gradient ascent on the target-class log
//! probability. Serves as the restricted-attack reference point next to the
//! unrestricted diffusion attack.

use crate::error::{Error, Result};
use crate::models::TargetModelAdapter;
use crate::tensor::{ImageTensor, ValueRange};

#[derive(Clone, Copy, Debug)]
pub struct PgdConfig {
    /// L-infinity radius around the clean image.
    pub epsilon: f64,
    /// Step size per iteration.
    pub step: f64,
    pub iterations: usize,
}

impl Default for PgdConfig {
    fn default() -> Self {
        PgdConfig {
            epsilon: 8.0 / 255.0,
            step: 2.0 / 255.0,
            iterations: 20,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PgdResult {
    pub image: ImageTensor,
    pub success: bool,
    pub gradient_calls: usize,
}

/// Runs targeted PGD toward `target_class` starting from a clean image.
pub fn pgd_baseline(
    model: &dyn TargetModelAdapter,
    x0: &ImageTensor,
    target_class: usize,
    cfg: &PgdConfig,
) -> Result<PgdResult> {
    if !(cfg.epsilon > 0.0) || !(cfg.step > 0.0) || cfg.iterations == 0 {
        return Err(Error::parameter("pgd needs positive epsilon, step, iterations"));
    }
    if target_class >= model.class_count() {
        return Err(Error::parameter(format!(
            "class {} outside 0..{}",
            target_class,
            model.class_count()
        )));
    }
    if !model.has_input_gradients() {
        return Err(Error::capability(format!(
            "{}: pgd needs input gradients",
            model.id()
        )));
    }
    x0.check_range(ValueRange::Pixel)?;

    let mut x = x0.clone();
    let mut gradient_calls = 0usize;
    for _ in 0..cfg.iterations {
        let g = model.grad_log_prob(&x, target_class)?;
        gradient_calls += 1;
        let mut next = x.clone();
        for ((nv, gv), ov) in next
            .data_mut()
            .iter_mut()
            .zip(g.data().iter())
            .zip(x0.data().iter())
        {
            let stepped = *nv + cfg.step * gv.signum();
            let lo = (ov - cfg.epsilon).max(0.0);
            let hi = (ov + cfg.epsilon).min(1.0);
            *nv = stepped.clamp(lo, hi);
        }
        x = next;
    }
    let success = model.predict(&x)? == target_class;
    Ok(PgdResult {
        image: x,
        success,
        gradient_calls,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::linear::LinearSoftmaxModel;
    use ndarray::{Array2, Array3};

    fn model() -> LinearSoftmaxModel {
        // Two classes over four pixels: class 1 likes the right half.
        let w = Array2::from_shape_vec(
            (2, 4),
            vec![4.0, 4.0, -4.0, -4.0, -4.0, -4.0, 4.0, 4.0],
        )
        .unwrap();
        LinearSoftmaxModel::new("lin", w, (1, 2, 2)).unwrap()
    }

    #[test]
    fn pgd_stays_inside_the_ball_and_flips_the_label() {
        let m = model();
        let x0 = ImageTensor::new(
            Array3::from_shape_vec((1, 2, 2), vec![0.9, 0.9, 0.1, 0.1]).unwrap(),
            ValueRange::Pixel,
        );
        assert_eq!(m.predict(&x0).unwrap(), 0);
        let cfg = PgdConfig {
            epsilon: 0.5,
            step: 0.1,
            iterations: 30,
        };
        let r = pgd_baseline(&m, &x0, 1, &cfg).unwrap();
        assert!(r.success);
        assert_eq!(r.gradient_calls, 30);
        for (adv, clean) in r.image.data().iter().zip(x0.data().iter()) {
            assert!((adv - clean).abs() <= cfg.epsilon + 1e-12);
            assert!((0.0..=1.0).contains(adv));
        }
    }

    #[test]
    fn tiny_budget_fails_honestly() {
        let m = model();
        let x0 = ImageTensor::new(
            Array3::from_shape_vec((1, 2, 2), vec![0.9, 0.9, 0.1, 0.1]).unwrap(),
            ValueRange::Pixel,
        );
        let cfg = PgdConfig {
            epsilon: 1e-4,
            step: 1e-4,
            iterations: 2,
        };
        let r = pgd_baseline(&m, &x0, 1, &cfg).unwrap();
        assert!(!r.success);
    }
}
