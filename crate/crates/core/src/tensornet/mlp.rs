use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::activation::{mish, mish_grad};
use super::params::ParamSet;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Activation used on hidden layers; the output layer is always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Mish,
    Identity,
}

/// Shape of a dense network. `depth` counts linear layers, so a depth of 3
/// has two hidden layers of width `hidden`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: usize,
    pub depth: usize,
    pub output: usize,
    #[serde(default)]
    pub activation: Activation,
}

/// Intermediate values kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpTape<T> {
    layer_inputs: Vec<Array2<T>>,
    pre_activations: Vec<Array2<T>>,
}

impl MlpSpec {
    pub fn new(input: usize, hidden: usize, depth: usize, output: usize) -> Self {
        Self {
            input,
            hidden,
            depth,
            output,
            activation: Activation::Mish,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("input", self.input),
            ("hidden", self.hidden),
            ("depth", self.depth),
            ("output", self.output),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        Ok(())
    }

    fn layer_dims(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.depth).map(move |k| {
            let fan_in = if k == 0 { self.input } else { self.hidden };
            let fan_out = if k + 1 == self.depth { self.output } else { self.hidden };
            (fan_in, fan_out)
        })
    }

    /// Uniform initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases.
    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, rng: &mut R) -> ParamSet<T> {
        let mut params = ParamSet::new();
        for (k, (fan_in, fan_out)) in self.layer_dims().enumerate() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut draw = || T::of(rng.random_range(-bound..=bound));
            let w = Array2::from_shape_simple_fn((fan_in, fan_out), &mut draw);
            let b = Array2::from_shape_simple_fn((1, fan_out), &mut draw);
            params.push(format!("{k}.weight"), w);
            params.push(format!("{k}.bias"), b);
        }
        params
    }

    pub fn zeros<T: Scalar>(&self) -> ParamSet<T> {
        let mut params = ParamSet::new();
        for (k, (fan_in, fan_out)) in self.layer_dims().enumerate() {
            params.push(format!("{k}.weight"), Array2::zeros((fan_in, fan_out)));
            params.push(format!("{k}.bias"), Array2::zeros((1, fan_out)));
        }
        params
    }

    pub fn check_params<T: Scalar>(&self, params: &ParamSet<T>) -> Result<()> {
        if params.len() != 2 * self.depth {
            return Err(Error::DimensionMismatch {
                what: "mlp parameter count",
                expected: 2 * self.depth,
                got: params.len(),
            });
        }
        for (k, (fan_in, fan_out)) in self.layer_dims().enumerate() {
            let w = params.array(2 * k);
            let b = params.array(2 * k + 1);
            if w.dim() != (fan_in, fan_out) || b.dim() != (1, fan_out) {
                return Err(Error::DimensionMismatch {
                    what: "mlp layer shape",
                    expected: fan_in * fan_out,
                    got: w.len(),
                });
            }
        }
        Ok(())
    }

    fn activate<T: Scalar>(&self, z: &Array2<T>) -> Array2<T> {
        match self.activation {
            Activation::Mish => z.mapv(mish),
            Activation::Identity => z.clone(),
        }
    }

    fn check_input<T>(&self, input: &ArrayView2<T>) -> Result<()> {
        if input.ncols() != self.input {
            return Err(Error::DimensionMismatch {
                what: "mlp input",
                expected: self.input,
                got: input.ncols(),
            });
        }
        Ok(())
    }

    /// Batched forward pass; rows are samples.
    pub fn forward<T: Scalar>(&self, params: &ParamSet<T>, input: ArrayView2<T>) -> Result<Array2<T>> {
        self.check_input(&input)?;
        self.check_params(params)?;
        let mut x = input.to_owned();
        for k in 0..self.depth {
            let mut z = x.dot(params.array(2 * k));
            z += params.array(2 * k + 1);
            x = if k + 1 == self.depth { z } else { self.activate(&z) };
        }
        Ok(x)
    }

    /// Forward pass that also records what [`MlpSpec::backward`] needs.
    pub fn forward_taped<T: Scalar>(
        &self,
        params: &ParamSet<T>,
        input: ArrayView2<T>,
    ) -> Result<(Array2<T>, MlpTape<T>)> {
        self.check_input(&input)?;
        self.check_params(params)?;
        let mut tape = MlpTape {
            layer_inputs: Vec::with_capacity(self.depth),
            pre_activations: Vec::with_capacity(self.depth.saturating_sub(1)),
        };
        let mut x = input.to_owned();
        for k in 0..self.depth {
            let mut z = x.dot(params.array(2 * k));
            z += params.array(2 * k + 1);
            tape.layer_inputs.push(x);
            if k + 1 == self.depth {
                return Ok((z, tape));
            }
            x = self.activate(&z);
            tape.pre_activations.push(z);
        }
        unreachable!("depth is at least 1")
    }

    /// Propagates `d_out` (gradient w.r.t. the outputs) back through the network.
    ///
    /// Parameter gradients are accumulated into `grads` when given; the gradient
    /// w.r.t. the network input is returned.
    pub fn backward<T: Scalar>(
        &self,
        params: &ParamSet<T>,
        tape: &MlpTape<T>,
        d_out: Array2<T>,
        mut grads: Option<&mut ParamSet<T>>,
    ) -> Array2<T> {
        let mut dz = d_out;
        for k in (0..self.depth).rev() {
            if let Some(g) = grads.as_deref_mut() {
                let dw = tape.layer_inputs[k].t().dot(&dz);
                *g.array_mut(2 * k) += &dw;
                let db = dz.sum_axis(Axis(0)).insert_axis(Axis(0));
                *g.array_mut(2 * k + 1) += &db;
            }
            let dx = dz.dot(&params.array(2 * k).t());
            if k == 0 {
                return dx;
            }
            dz = match self.activation {
                Activation::Mish => {
                    let mut d = dx;
                    d.zip_mut_with(&tape.pre_activations[k - 1], |d, &z| *d = *d * mish_grad(z));
                    d
                }
                Activation::Identity => dx,
            };
        }
        unreachable!("depth is at least 1")
    }
}

/// Single-sample convenience wrapper over [`MlpSpec::forward`].
pub fn mlp_forward<T: Scalar>(params: &ParamSet<T>, spec: &MlpSpec, input: &[T]) -> Result<Vec<T>> {
    let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
    Ok(spec.forward(params, x)?.into_raw_vec_and_offset().0)
}
