use ndarray::{Array2, ArrayView2};
use rand::RngCore;

use crate::bounds::ActionBounds;
use crate::error::Result;
use crate::scalar::Scalar;

/// Shared sampling interface for every policy family, used by evaluation.
pub trait Policy<T: Scalar> {
    fn state_dim(&self) -> usize;

    fn action_dim(&self) -> usize;

    fn bounds(&self) -> &ActionBounds<T>;

    /// One action per state row; every action lies within [`Policy::bounds`].
    fn sample_batch(&self, states: ArrayView2<T>, rng: &mut dyn RngCore) -> Result<Array2<T>>;

    fn sample(&self, state: &[T], rng: &mut dyn RngCore) -> Result<Vec<T>> {
        let s = ArrayView2::from_shape((1, state.len()), state).expect("row vector");
        Ok(self.sample_batch(s, rng)?.into_raw_vec_and_offset().0)
    }
}

pub(crate) fn standard_normal<T: Scalar>(rng: &mut dyn RngCore, rows: usize, cols: usize) -> Array2<T> {
    use rand::Rng;
    use rand_distr::StandardNormal;
    Array2::from_shape_simple_fn((rows, cols), || T::of(rng.sample::<f64, _>(StandardNormal)))
}

pub(crate) fn check_cols<T>(x: &ArrayView2<T>, expected: usize, what: &'static str) -> Result<()> {
    if x.ncols() != expected {
        return Err(crate::Error::DimensionMismatch {
            what,
            expected,
            got: x.ncols(),
        });
    }
    Ok(())
}
