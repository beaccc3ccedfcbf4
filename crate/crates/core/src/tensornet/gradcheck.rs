//! Central finite-difference gradient checking.

use super::params::ParamSet;
use crate::scalar::Scalar;

/// Denominator floor for relative errors, so gradients that are zero in
/// both routes compare as equal instead of dividing by zero.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// Numerical gradient of `loss` w.r.t. every scalar of `params`, in flat order.
pub fn central_difference<T, F>(params: &ParamSet<T>, step: f64, mut loss: F) -> Vec<f64>
where
    T: Scalar,
    F: FnMut(&ParamSet<T>) -> T,
{
    let mut probe = params.clone();
    let h = T::of(step);
    (0..params.num_scalars())
        .map(|idx| {
            let orig = params.get_flat(idx);
            probe.set_flat(idx, orig + h);
            let up = loss(&probe).as_f64();
            probe.set_flat(idx, orig - h);
            let down = loss(&probe).as_f64();
            probe.set_flat(idx, orig);
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `max_k |a_k - b_k| / max(|a_k|, |b_k|, RELATIVE_ERROR_FLOOR)`.
pub fn max_relative_error<T: Scalar>(analytic: &[T], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            let a = a.as_f64();
            (a - n).abs() / a.abs().max(n.abs()).max(RELATIVE_ERROR_FLOOR)
        })
        .fold(0.0, f64::max)
}

/// Compares an analytic gradient against central differences of `loss`.
pub fn check_gradient<T, F>(params: &ParamSet<T>, analytic: &ParamSet<T>, step: f64, loss: F) -> f64
where
    T: Scalar,
    F: FnMut(&ParamSet<T>) -> T,
{
    let numeric = central_difference(params, step, loss);
    max_relative_error(&analytic.to_flat(), &numeric)
}
