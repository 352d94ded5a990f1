use alloc::vec::Vec;

use super::tensor::ParamTensor;
use crate::{Error, Result};

/// `(f(x + h) - f(x - h)) / 2h`
pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Compares analytic gradients against central differences.
///
/// `f(params, with_grad)` must return the scalar value and, when
/// `with_grad` is set, accumulate its gradient into every parameter. Returns
/// the largest `|analytic - numeric| / max(1, |analytic|)` over all
/// coordinates. Gradients are zeroed first and left holding the analytic
/// gradient on return.
pub fn grad_check<F>(mut f: F, params: &mut [ParamTensor], h: f64) -> Result<f64>
where
    F: FnMut(&mut [ParamTensor], bool) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::Argument("finite-difference step must be positive".into()));
    }
    for p in params.iter_mut() {
        p.zero_grad();
    }
    let first = f(params, true)?;
    let second = f(params, false)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }
    let analytic: Vec<Vec<f64>> = params
        .iter_mut()
        .map(|p| p.grad_mut().to_vec())
        .collect();

    let mut worst: f64 = 0.0;
    for (pi, grads) in analytic.iter().enumerate() {
        for (ci, &a) in grads.iter().enumerate() {
            let orig = params[pi].values()[ci];
            params[pi].values_mut()[ci] = orig + h;
            let plus = f(params, false)?;
            params[pi].values_mut()[ci] = orig - h;
            let minus = f(params, false)?;
            params[pi].values_mut()[ci] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = libm::fabs(a - numeric) / libm::fabs(a).max(1.0);
            if !err.is_finite() {
                return Err(Error::NonFinite("gradient check produced NaN".into()));
            }
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
