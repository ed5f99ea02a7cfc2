//! Central finite-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::numgrad::ParamStore;

pub const GRAD_CHECK_H_MIN: f64 = 1e-6;
pub const GRAD_CHECK_H_MAX: f64 = 1e-3;

/// Compares the gradients stored in `params` against central finite
/// differences of `loss_fn` and returns the maximum relative error over all
/// scalar parameters:
///
///   |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
///
/// Each coordinate is perturbed in place and restored to its exact original
/// bits before the next one is touched. The analytic gradients must already
/// be present in the store's gradient slots.
pub fn grad_check<F>(mut loss_fn: F, params: &mut ParamStore, h: f64) -> Result<f64>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    if !(GRAD_CHECK_H_MIN..=GRAD_CHECK_H_MAX).contains(&h) {
        return Err(Error::Input(format!(
            "grad_check step h={h:e} outside [{GRAD_CHECK_H_MIN:e}, {GRAD_CHECK_H_MAX:e}]"
        )));
    }
    let mut max_rel = 0.0_f64;
    for idx in 0..params.len() {
        let n = params.param_at(idx).1.len();
        for k in 0..n {
            let original = params.param_at(idx).1.as_slice()[k];

            params.param_at_mut(idx).as_mut_slice()[k] = original + h;
            let plus = loss_fn(params);
            params.param_at_mut(idx).as_mut_slice()[k] = original - h;
            let minus = loss_fn(params);
            params.param_at_mut(idx).as_mut_slice()[k] = original;

            let (plus, minus) = (plus?, minus?);
            let name = params.param_at(idx).0;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss while perturbing {name:?}[{k}]"
                )));
            }
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = params.grad_at(idx).as_slice()[k];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
