//! Composite objective: mean squared error plus isotropic total variation
//! of the prediction, `L = MSE + lambda * TV`.
//!
//! TV sums `sqrt(dx^2 + dy^2 + eps)` over every pixel of every sample and
//! channel, with forward differences that are zero on the last column (dx)
//! and last row (dy).

use crate::error::{shape, Result};
use crate::tensor::{Scalar, Tensor};

/// Compensated (Neumaier) summation, so that sums of many equal terms come
/// out as the correctly rounded product.
#[derive(Default)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

fn check_dims<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
    if pred.dims() != target.dims() {
        return Err(shape(format!("prediction {:?} vs target {:?}", pred.dims(), target.dims())));
    }
    pred.nchw()
}

pub fn mse<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    check_dims(pred, target)?;
    let mut sum = CompensatedSum::default();
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        sum.add((p.as_f64() - t.as_f64()).powi(2));
    }
    Ok(sum.value() / pred.len() as f64)
}

fn forward_diffs<T: Scalar>(d: &[T], base: usize, i: usize, j: usize, h: usize, w: usize) -> (f64, f64) {
    let v = d[base + i * w + j].as_f64();
    let dx = if j + 1 < w { d[base + i * w + j + 1].as_f64() - v } else { 0.0 };
    let dy = if i + 1 < h { d[base + (i + 1) * w + j].as_f64() - v } else { 0.0 };
    (dx, dy)
}

pub fn total_variation<T: Scalar>(pred: &Tensor<T>, epsilon: f64) -> Result<f64> {
    let (n, c, h, w) = pred.nchw()?;
    let d = pred.data();
    let mut sum = CompensatedSum::default();
    for plane in 0..n * c {
        for i in 0..h {
            for j in 0..w {
                let (dx, dy) = forward_diffs(d, plane * h * w, i, j, h, w);
                sum.add((dx * dx + dy * dy + epsilon).sqrt());
            }
        }
    }
    Ok(sum.value())
}

pub fn loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, tv_lambda: f64, tv_epsilon: f64) -> Result<f64> {
    let data = mse(pred, target)?;
    if tv_lambda == 0.0 {
        return Ok(data);
    }
    Ok(data + tv_lambda * total_variation(pred, tv_epsilon)?)
}

/// Loss value and its gradient with respect to `pred`. Where a TV term is
/// exactly zero (possible only with `tv_epsilon = 0`) its gradient is taken
/// as zero.
pub fn loss_and_grad<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    tv_lambda: f64,
    tv_epsilon: f64,
) -> Result<(f64, Tensor<T>)> {
    let (n, c, h, w) = check_dims(pred, target)?;
    let count = pred.len() as f64;
    let pd = pred.data();
    let mut grad: Vec<f64> =
        pd.iter().zip(target.data()).map(|(&p, &t)| 2.0 * (p.as_f64() - t.as_f64()) / count).collect();
    let value = loss(pred, target, tv_lambda, tv_epsilon)?;
    if tv_lambda != 0.0 {
        for plane in 0..n * c {
            let base = plane * h * w;
            for i in 0..h {
                for j in 0..w {
                    let (dx, dy) = forward_diffs(pd, base, i, j, h, w);
                    let t = (dx * dx + dy * dy + tv_epsilon).sqrt();
                    if t == 0.0 {
                        continue;
                    }
                    let k = base + i * w + j;
                    grad[k] -= tv_lambda * (dx + dy) / t;
                    if j + 1 < w {
                        grad[k + 1] += tv_lambda * dx / t;
                    }
                    if i + 1 < h {
                        grad[k + w] += tv_lambda * dy / t;
                    }
                }
            }
        }
    }
    let grad = Tensor::new(pred.dims().to_vec(), grad.into_iter().map(T::from_f64_lossy).collect())?;
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(h: usize, w: usize, v: Vec<f64>) -> Tensor<f64> {
        Tensor::new(vec![1, 1, h, w], v).unwrap()
    }

    #[test]
    fn constant_patch_tv_is_count_times_sqrt_eps() {
        let p = Tensor::full(&[1, 1, 30, 30], 3.5f64);
        let value = loss(&p, &p, 1.0, 1e-8).unwrap();
        // fl(sqrt(1e-8)) * 900 is one ulp above fl(0.09)
        assert!((value - 0.09).abs() <= 2.0 * f64::EPSILON * 0.09, "{value}");
    }

    #[test]
    fn unit_offset_is_unit_mse() {
        let p = Tensor::full(&[2, 1, 4, 4], 2.0f64);
        let q = Tensor::full(&[2, 1, 4, 4], 1.0f64);
        assert_eq!(loss(&p, &q, 0.0, 1e-8).unwrap(), 1.0);
    }

    #[test]
    fn ramp_tv() {
        let p = t(2, 2, vec![0.0, 1.0, 0.0, 1.0]);
        assert_eq!(total_variation(&p, 0.0).unwrap(), 2.0);
        let target = t(2, 2, vec![0.0; 4]);
        assert_eq!(loss(&p, &target, 1.0, 0.0).unwrap(), 0.5 + 2.0);
    }

    #[test]
    fn gradient_matches_differences() {
        let p = t(3, 4, (0..12).map(|i| ((i * 7) % 5) as f64 * 0.3).collect());
        let q = t(3, 4, (0..12).map(|i| (i as f64).sin()).collect());
        let (value, grad) = loss_and_grad(&p, &q, 0.2, 1e-3).unwrap();
        for k in 0..12 {
            let h = 1e-6;
            let mut plus = p.clone();
            plus.data_mut()[k] += h;
            let mut minus = p.clone();
            minus.data_mut()[k] -= h;
            let fd = (loss(&plus, &q, 0.2, 1e-3).unwrap() - loss(&minus, &q, 0.2, 1e-3).unwrap()) / (2.0 * h);
            assert!((fd - grad.data()[k]).abs() < 1e-7, "coord {k}: {fd} vs {}", grad.data()[k]);
        }
        assert_eq!(value, loss(&p, &q, 0.2, 1e-3).unwrap());
    }

    #[test]
    fn flat_tv_has_zero_gradient_without_epsilon() {
        let p = Tensor::full(&[1, 1, 3, 3], 1.0f64);
        let (_, grad) = loss_and_grad(&p, &p, 1.0, 0.0).unwrap();
        assert!(grad.data().iter().all(|&g| g == 0.0));
        assert!(loss(&p, &t(2, 2, vec![0.0; 4]), 0.0, 0.0).is_err());
    }
}
