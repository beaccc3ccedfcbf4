use super::params::ParamSet;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam optimizer moments for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: ParamSet<T>,
    pub v: ParamSet<T>,
    pub step: u64,
    pub lr: T,
    /// Multiplier on `lr` for the next update; set by learning-rate schedules.
    pub lr_scale: T,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamSet<T>, lr: T) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            lr,
            lr_scale: T::one(),
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    ///
    /// Non-finite gradients are rejected before anything is modified.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &ParamSet<T>) -> Result<()> {
        params.check_shape(grads, "adam gradients")?;
        params.check_shape(&self.m, "adam moments")?;
        if !grads.all_finite() {
            return Err(Error::NonFinite {
                context: "adam gradients".into(),
                step: self.step as usize,
            });
        }
        let b1 = T::of(ADAM_BETA1);
        let b2 = T::of(ADAM_BETA2);
        let eps = T::of(ADAM_EPS);
        self.step += 1;
        let t = self.step as i32;
        let bc1 = T::one() - b1.powi(t);
        let bc2 = T::one() - b2.powi(t);
        let lr = self.lr * self.lr_scale;

        for (k, g) in grads.iter().enumerate() {
            let m = self.m.array_mut(k);
            m.zip_mut_with(&g.value, |m, &g| *m = b1 * *m + (T::one() - b1) * g);
            let v = self.v.array_mut(k);
            v.zip_mut_with(&g.value, |v, &g| *v = b2 * *v + (T::one() - b2) * g * g);
            let m = self.m.array(k);
            let v = self.v.array(k);
            let p = params.array_mut(k);
            ndarray::Zip::from(p).and(m).and(v).for_each(|p, &m, &v| {
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
            });
        }
        Ok(())
    }
}
