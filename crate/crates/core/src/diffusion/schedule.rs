use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_BETA_MIN: f64 = 0.1;
pub const DEFAULT_BETA_MAX: f64 = 10.0;

/// Variance-preserving noise schedule for `n` diffusion steps.
///
/// Indices are 1-based throughout: `beta(1)` is the smallest noise level and
/// `alpha_bar(n)` the final signal retention factor.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule<T> {
    n: usize,
    beta_min: f64,
    beta_max: f64,
    betas: Vec<T>,
    alphas: Vec<T>,
    alpha_bars: Vec<T>,
}

/// `beta_i = 1 - exp(-beta_min / n - (beta_max - beta_min) (2i - 1) / (2 n^2))`
pub fn build_vp_schedule<T: Scalar>(n: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule<T>> {
    if n == 0 {
        return Err(Error::config("n_diffusion_steps", "must be at least 1"));
    }
    if !(beta_min > 0.0 && beta_min < beta_max && beta_max.is_finite()) {
        return Err(Error::config(
            "beta_min/beta_max",
            format!("need 0 < beta_min < beta_max, got {beta_min} and {beta_max}"),
        ));
    }
    let nf = n as f64;
    let mut betas = Vec::with_capacity(n);
    let mut alphas = Vec::with_capacity(n);
    let mut alpha_bars = Vec::with_capacity(n);
    let mut cum = 1.0f64;
    for i in 1..=n {
        let exponent = -beta_min / nf - 0.5 * (beta_max - beta_min) * (2.0 * i as f64 - 1.0) / (nf * nf);
        let alpha = exponent.exp();
        cum *= alpha;
        betas.push(T::of(-exponent.exp_m1()));
        alphas.push(T::of(alpha));
        alpha_bars.push(T::of(cum));
    }
    Ok(NoiseSchedule {
        n,
        beta_min,
        beta_max,
        betas,
        alphas,
        alpha_bars,
    })
}

impl<T: Scalar> NoiseSchedule<T> {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn beta_range(&self) -> (f64, f64) {
        (self.beta_min, self.beta_max)
    }

    pub fn check_index(&self, i: usize) -> Result<()> {
        if i == 0 || i > self.n {
            return Err(Error::IndexOutOfRange { index: i, max: self.n });
        }
        Ok(())
    }

    pub fn beta(&self, i: usize) -> T {
        self.betas[i - 1]
    }

    pub fn alpha(&self, i: usize) -> T {
        self.alphas[i - 1]
    }

    pub fn alpha_bar(&self, i: usize) -> T {
        self.alpha_bars[i - 1]
    }

    pub fn betas(&self) -> &[T] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[T] {
        &self.alpha_bars
    }

    /// Coefficients `(1/sqrt(alpha_i), beta_i/sqrt(alpha_i (1 - alpha_bar_i)), sigma_i)` of one
    /// reverse step; `sigma_1` is zero so the last step adds no noise.
    pub fn reverse_coefficients(&self, i: usize) -> (T, T, T) {
        let alpha = self.alpha(i);
        let beta = self.beta(i);
        let keep = T::one() / alpha.sqrt();
        let eps_coef = beta / (alpha * (T::one() - self.alpha_bar(i))).sqrt();
        let sigma = if i == 1 { T::zero() } else { beta.sqrt() };
        (keep, eps_coef, sigma)
    }
}

/// `sqrt(alpha_bar_i) a0 + sqrt(1 - alpha_bar_i) eps`
pub fn forward_noise<T: Scalar>(sched: &NoiseSchedule<T>, a0: &[T], i: usize, eps: &[T]) -> Result<Vec<T>> {
    sched.check_index(i)?;
    if a0.len() != eps.len() {
        return Err(Error::DimensionMismatch {
            what: "forward_noise eps",
            expected: a0.len(),
            got: eps.len(),
        });
    }
    let ab = sched.alpha_bar(i);
    let (s, n) = (ab.sqrt(), (T::one() - ab).sqrt());
    Ok(a0.iter().zip(eps).map(|(&a, &e)| s * a + n * e).collect())
}
