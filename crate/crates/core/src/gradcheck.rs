//! Central finite-difference gradient checking.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-6;

/// Numerical gradient of `f` at `point` by central differences with step [`FD_STEP`].
pub fn central_differences<F>(f: F, point: &Tensor) -> Result<Tensor>
where
    F: Fn(&Tensor) -> Result<f64>,
{
    let mut probe = point.clone();
    let mut grad = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let x0 = point.data()[i];
        probe.data_mut()[i] = x0 + FD_STEP;
        let plus = f(&probe)?;
        probe.data_mut()[i] = x0 - FD_STEP;
        let minus = f(&probe)?;
        probe.data_mut()[i] = x0;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite {
                context: "finite_difference_check",
                index: i,
            });
        }
        grad.push((plus - minus) / (2.0 * FD_STEP));
    }
    Tensor::new(point.shape().to_vec(), grad)
}

/// `max_i |fd_i - analytic_i| / max(1, |fd_i|)`.
pub fn max_relative_error(fd: &[f64], analytic: &[f64]) -> f64 {
    fd.iter()
        .zip(analytic)
        .map(|(n, a)| (n - a).abs() / n.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Compares `analytic_grad` against central differences of `f` at `point` and
/// returns the maximum relative error over all entries.
pub fn finite_difference_check<F>(f: F, point: &Tensor, analytic_grad: &Tensor) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<f64>,
{
    if point.shape() != analytic_grad.shape() {
        return Err(crate::error::shape_err(
            "finite_difference_check",
            "gradient element count",
            point.len(),
            analytic_grad.len(),
        ));
    }
    let fd = central_differences(f, point)?;
    Ok(max_relative_error(fd.data(), analytic_grad.data()))
}
