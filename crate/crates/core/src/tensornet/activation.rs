use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `tanh(softplus(x))` and `sigmoid(x)` from one exponential: with
/// `e = exp(x)` and `n = e^2 + 2e`, `tanh(ln(1 + e)) = n / (n + 2)`.
#[inline]
fn mish_parts<T: Scalar>(x: T) -> (T, T) {
    if x > T::of(20.0) {
        return (T::one(), T::one());
    }
    let e = x.exp();
    let n = e * (e + T::of(2.0));
    (n / (n + T::of(2.0)), e / (T::one() + e))
}

/// Mish activation `x * tanh(softplus(x))`.
#[inline]
pub fn mish<T: Scalar>(x: T) -> T {
    x * mish_parts(x).0
}

/// Derivative of [`mish`].
#[inline]
pub fn mish_grad<T: Scalar>(x: T) -> T {
    let (t, s) = mish_parts(x);
    t + x * (T::one() - t * t) * s
}

/// Sinusoidal embedding of a diffusion timestep.
///
/// Entry `2k` is `sin(i / 10000^(2k/dim))` and entry `2k+1` the matching cosine.
pub fn time_embed<T: Scalar>(i: usize, dim: usize) -> Result<Vec<T>> {
    if dim < 2 || dim % 2 != 0 {
        return Err(Error::config("embed_dim", format!("{dim} must be even and at least 2")));
    }
    let t = i as f64;
    let mut out = Vec::with_capacity(dim);
    for k in 0..dim / 2 {
        let freq = 10000f64.powf((2 * k) as f64 / dim as f64);
        out.push(T::of((t / freq).sin()));
        out.push(T::of((t / freq).cos()));
    }
    Ok(out)
}
