use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-dimension box `[low_d, high_d]` that every emitted action lies in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionBounds<T> {
    pub low: Vec<T>,
    pub high: Vec<T>,
}

impl<T: Scalar> ActionBounds<T> {
    pub fn new(low: Vec<T>, high: Vec<T>) -> Result<Self> {
        if low.len() != high.len() {
            return Err(Error::DimensionMismatch {
                what: "action bounds",
                expected: low.len(),
                got: high.len(),
            });
        }
        if low.is_empty() {
            return Err(Error::config("action_bounds", "needs at least one dimension"));
        }
        for (l, h) in low.iter().zip(&high) {
            if !(l.is_finite() && h.is_finite() && l < h) {
                return Err(Error::config(
                    "action_bounds",
                    format!("need finite low < high, got [{l}, {h}]"),
                ));
            }
        }
        Ok(Self { low, high })
    }

    /// `[-1, 1]` in every dimension.
    pub fn symmetric_unit(dim: usize) -> Self {
        Self {
            low: vec![-T::one(); dim],
            high: vec![T::one(); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn contains(&self, action: ArrayView1<T>) -> bool {
        action
            .iter()
            .zip(self.low.iter().zip(&self.high))
            .all(|(&a, (&l, &h))| a >= l && a <= h)
    }

    pub fn clamp_rows(&self, actions: &mut Array2<T>) {
        for mut row in actions.rows_mut() {
            for (d, a) in row.iter_mut().enumerate() {
                *a = a.max(self.low[d]).min(self.high[d]);
            }
        }
    }

    /// Clamps in place and returns the pass-through mask (1 inside the box, 0 where clipped).
    pub fn clamp_rows_with_mask(&self, actions: &mut Array2<T>) -> Array2<T> {
        let mut mask = Array2::from_elem(actions.raw_dim(), T::one());
        for (mut row, mut mrow) in actions.rows_mut().into_iter().zip(mask.rows_mut()) {
            for (d, (a, m)) in row.iter_mut().zip(mrow.iter_mut()).enumerate() {
                if *a < self.low[d] {
                    *a = self.low[d];
                    *m = T::zero();
                } else if *a > self.high[d] {
                    *a = self.high[d];
                    *m = T::zero();
                }
            }
        }
        mask
    }

    pub fn center(&self) -> Vec<T> {
        let two = T::of(2.0);
        self.low.iter().zip(&self.high).map(|(&l, &h)| (l + h) / two).collect()
    }

    pub fn half_width(&self) -> Vec<T> {
        let two = T::of(2.0);
        self.low.iter().zip(&self.high).map(|(&l, &h)| (h - l) / two).collect()
    }
}
