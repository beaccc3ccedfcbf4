use ndarray::{Array2, Zip};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One named parameter array. Biases and vectors are stored as `1 x n` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Array2<T>,
}

/// Ordered collection of named parameter arrays.
///
/// Shapes are fixed once an entry is pushed; all in-place operations keep them.
/// Gradients and optimizer moments use the same type.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<T> {
    entries: Vec<Param<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Array2<T>) {
        self.entries.push(Param {
            name: name.into(),
            value,
        });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.entries.iter_mut()
    }

    pub fn get(&self, name: &str) -> Option<&Array2<T>> {
        self.entries.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn array(&self, index: usize) -> &Array2<T> {
        &self.entries[index].value
    }

    pub fn array_mut(&mut self, index: usize) -> &mut Array2<T> {
        &mut self.entries[index].value
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: Array2::zeros(p.value.raw_dim()),
                })
                .collect(),
        }
    }

    /// Total number of scalars across all arrays.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|p| p.value.len()).sum()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.value.shape() == b.value.shape())
    }

    pub(crate) fn check_shape(&self, other: &Self, what: &'static str) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::DimensionMismatch {
                what,
                expected: self.entries.len(),
                got: other.entries.len(),
            });
        }
        for (a, b) in self.entries.iter().zip(&other.entries) {
            if a.value.shape() != b.value.shape() {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: a.value.len(),
                    got: b.value.len(),
                });
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|p| p.value.iter().all(|v| v.is_finite()))
    }

    /// Scalar at a flat position, counting through arrays in order.
    pub fn get_flat(&self, mut index: usize) -> T {
        for p in &self.entries {
            if index < p.value.len() {
                return *p.value.iter().nth(index).unwrap();
            }
            index -= p.value.len();
        }
        panic!("flat index out of range");
    }

    pub fn set_flat(&mut self, mut index: usize, v: T) {
        for p in &mut self.entries {
            if index < p.value.len() {
                *p.value.iter_mut().nth(index).unwrap() = v;
                return;
            }
            index -= p.value.len();
        }
        panic!("flat index out of range");
    }

    pub fn to_flat(&self) -> Vec<T> {
        self.entries.iter().flat_map(|p| p.value.iter().copied()).collect()
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &Self, scale: T) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            a.value.scaled_add(scale, &b.value);
        }
    }

    pub fn scale(&mut self, s: T) {
        for p in &mut self.entries {
            p.value.mapv_inplace(|v| v * s);
        }
    }

    pub fn fill(&mut self, v: T) {
        for p in &mut self.entries {
            p.value.fill(v);
        }
    }

    pub fn sq_norm(&self) -> T {
        self.entries
            .iter()
            .flat_map(|p| p.value.iter())
            .fold(T::zero(), |acc, &v| acc + v * v)
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        debug_assert!(self.same_shape(other));
        self.entries
            .iter()
            .zip(&other.entries)
            .flat_map(|(a, b)| a.value.iter().zip(b.value.iter()))
            .fold(T::zero(), |acc, (&x, &y)| acc.max((x - y).abs()))
    }

    /// Copy the values of `other` into `self` without reallocating.
    pub fn assign(&mut self, other: &Self) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            a.value.assign(&b.value);
        }
    }
}

/// Polyak averaging `target = rho * target + (1 - rho) * online`.
pub fn polyak_update<T: Scalar>(target: &mut ParamSet<T>, online: &ParamSet<T>, rho: T) -> Result<()> {
    if !(rho >= T::zero() && rho <= T::one()) {
        return Err(Error::config("rho", format!("{rho} is outside [0, 1]")));
    }
    target.check_shape(online, "polyak_update")?;
    let keep = T::one() - rho;
    for (t, o) in target.entries.iter_mut().zip(&online.entries) {
        Zip::from(&mut t.value)
            .and(&o.value)
            .for_each(|t, &o| *t = rho * *t + keep * o);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn single(v: f64) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.push("w", array![[v]]);
        p
    }

    #[test]
    fn polyak_edge_values() {
        let online = single(2.0);
        let mut t = single(1.0);
        polyak_update(&mut t, &online, 1.0).unwrap();
        assert_eq!(t, single(1.0));
        polyak_update(&mut t, &online, 0.0).unwrap();
        assert_eq!(t, single(2.0));

        let mut t = single(1.0);
        polyak_update(&mut t, &online, 0.9).unwrap();
        assert!((t.get("w").unwrap()[[0, 0]] - 1.1).abs() < 1e-15);
    }

    #[test]
    fn polyak_rejects_bad_rho() {
        let online = single(2.0);
        let mut t = single(1.0);
        assert!(matches!(
            polyak_update(&mut t, &online, 1.5),
            Err(Error::InvalidConfig { .. })
        ));
        assert!(polyak_update(&mut t, &online, -0.1).is_err());
        assert_eq!(t, single(1.0));
    }

    #[test]
    fn flat_indexing_spans_arrays() {
        let mut p = ParamSet::new();
        p.push("a", array![[1.0, 2.0]]);
        p.push("b", array![[3.0], [4.0]]);
        assert_eq!(p.num_scalars(), 4);
        assert_eq!(p.get_flat(2), 3.0);
        p.set_flat(3, 9.0);
        assert_eq!(p.to_flat(), vec![1.0, 2.0, 3.0, 9.0]);
    }

    proptest! {
        #[test]
        fn polyak_contracts_toward_online(
            t in prop::collection::vec(-10.0f64..10.0, 6),
            o in prop::collection::vec(-10.0f64..10.0, 6),
            rho in 0.0f64..=1.0,
        ) {
            let mk = |v: &[f64]| {
                let mut p = ParamSet::new();
                p.push("w", Array2::from_shape_vec((2, 3), v.to_vec()).unwrap());
                p
            };
            let online = mk(&o);
            let before = mk(&t);
            let mut after = before.clone();
            polyak_update(&mut after, &online, rho).unwrap();
            for ((a, b), c) in after.to_flat().iter().zip(before.to_flat()).zip(online.to_flat()) {
                prop_assert!((a - c).abs() <= rho * (b - c).abs() + 1e-12);
            }
        }
    }
}
