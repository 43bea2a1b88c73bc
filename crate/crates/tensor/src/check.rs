//! Central-difference gradient oracle.
//!
//! This is the reference every analytic backward pass is validated against:
//! it knows nothing about the tape and only evaluates the function twice per
//! element, so agreement with `backward` is evidence both sides are right.

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Numeric gradient of scalar `f` at `x` via central differences in f64.
pub fn finite_diff_grad<F>(f: F, x: &Tensor<f64>, h: f64) -> Result<Tensor<f64>>
where
    F: Fn(&Tensor<f64>) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(TensorError::Contract {
            op: "finite_diff_grad",
            reason: format!("step size must be positive, got {h}"),
        });
    }
    let base = x.to_vec();
    let mut grad = vec![0.0f64; base.len()];
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += h;
        let mut minus = base.clone();
        minus[i] -= h;
        let fp = f(&Tensor::from_vec(plus, x.shape())?)?;
        let fm = f(&Tensor::from_vec(minus, x.shape())?)?;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    Tensor::from_vec(grad, x.shape())
}

/// Largest elementwise relative error, ignoring entries where both gradients
/// are below `floor`.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            let scale = a.abs().max(n.abs());
            if scale < floor {
                0.0
            } else {
                (a - n).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_known_quadratic_gradient() {
        // f(x) = sum(x^2) has gradient 2x.
        let x = Tensor::from_vec(vec![1.0, -2.0, 0.5], &[3]).unwrap();
        let g = finite_diff_grad(|v| v.mul(v)?.sum_all().item(), &x, 1e-5).unwrap();
        for (gi, xi) in g.data().iter().zip(x.data()) {
            assert!((gi - 2.0 * xi).abs() < 1e-8, "{gi} vs {}", 2.0 * xi);
        }
    }

    #[test]
    fn rejects_non_positive_step() {
        let x = Tensor::from_vec(vec![1.0], &[1]).unwrap();
        assert!(finite_diff_grad(|v| v.sum_all().item(), &x, 0.0).is_err());
    }
}
