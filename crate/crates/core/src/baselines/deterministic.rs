use ndarray::{Array2, ArrayView2};
use rand::RngCore;

use crate::bounds::ActionBounds;
use crate::error::{Error, Result};
use crate::policy::{check_cols, Policy};
use crate::scalar::Scalar;
use crate::tensornet::{MlpSpec, ParamSet};

/// Deterministic actor `a = center + half_width * tanh(f(s))`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeterministicPolicy<T> {
    pub params: ParamSet<T>,
    net: MlpSpec,
    bounds: ActionBounds<T>,
}

/// Components of the TD3+BC actor objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Td3BcLoss<T> {
    /// `mean ||pi(s) - a||^2`.
    pub bc: T,
    /// `-alpha * mean Q(s, pi(s))`.
    pub q: T,
    /// Mean of `Q(s, pi(s))` before weighting.
    pub mean_q: T,
}

impl<T: Scalar> Td3BcLoss<T> {
    pub fn total(&self) -> T {
        self.bc + self.q
    }
}

impl<T: Scalar> DeterministicPolicy<T> {
    pub fn new(
        state_dim: usize,
        hidden: usize,
        depth: usize,
        bounds: ActionBounds<T>,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        let net = MlpSpec::new(state_dim, hidden, depth, bounds.dim());
        net.validate()?;
        let params = net.init(rng);
        Self::from_params(net, params, bounds)
    }

    pub fn from_params(net: MlpSpec, params: ParamSet<T>, bounds: ActionBounds<T>) -> Result<Self> {
        net.check_params(&params)?;
        if net.output != bounds.dim() {
            return Err(Error::DimensionMismatch {
                what: "actor output",
                expected: bounds.dim(),
                got: net.output,
            });
        }
        Ok(Self { params, net, bounds })
    }

    pub fn net_spec(&self) -> &MlpSpec {
        &self.net
    }

    pub fn act(&self, states: ArrayView2<T>) -> Result<Array2<T>> {
        let y = self.net.forward(&self.params, states)?;
        Ok(self.squash(y))
    }

    fn squash(&self, mut y: Array2<T>) -> Array2<T> {
        let c = self.bounds.center();
        let h = self.bounds.half_width();
        for ((_, d), v) in y.indexed_iter_mut() {
            *v = c[d] + h[d] * v.tanh();
        }
        y
    }

    /// TD3+BC actor loss `-alpha * mean Q(s, pi(s)) + mean ||pi(s) - a||^2`.
    /// `dq_da` maps `(actions, weight)` to the per-row Q and `weight * dQ/da`.
    pub fn td3bc_loss_grad<F>(
        &self,
        states: ArrayView2<T>,
        actions: ArrayView2<T>,
        alpha: T,
        dq_da: F,
    ) -> Result<(Td3BcLoss<T>, ParamSet<T>)>
    where
        F: FnOnce(ArrayView2<T>, T) -> Result<(Vec<T>, Array2<T>)>,
    {
        if states.nrows() == 0 {
            return Err(Error::EmptyBatch("td3bc_loss"));
        }
        check_cols(&actions, self.bounds.dim(), "actor action")?;
        let (y, tape) = self.net.forward_taped(&self.params, states)?;
        let pi = self.squash(y.clone());
        let b = T::of(states.nrows() as f64);
        let (q, g) = dq_da(pi.view(), -alpha / b)?;
        let mean_q = q.iter().copied().sum::<T>() / b;
        let diff = &pi - &actions;
        let bc = diff.mapv(|v| v * v).sum() / b;
        let h = self.bounds.half_width();
        let mut d_y = g + &diff * (T::of(2.0) / b);
        for ((r, d), v) in d_y.indexed_iter_mut() {
            let t = y[[r, d]].tanh();
            *v *= h[d] * (T::one() - t * t);
        }
        let loss = Td3BcLoss {
            bc,
            q: -alpha * mean_q,
            mean_q,
        };
        if !loss.total().is_finite() {
            return Err(Error::NonFinite {
                context: "td3bc_loss".into(),
                step: 0,
            });
        }
        let mut grads = self.params.zeros_like();
        self.net.backward(&self.params, &tape, d_y, Some(&mut grads));
        Ok((loss, grads))
    }
}

impl<T: Scalar> Policy<T> for DeterministicPolicy<T> {
    fn state_dim(&self) -> usize {
        self.net.input
    }

    fn action_dim(&self) -> usize {
        self.bounds.dim()
    }

    fn bounds(&self) -> &ActionBounds<T> {
        &self.bounds
    }

    fn sample_batch(&self, states: ArrayView2<T>, _rng: &mut dyn RngCore) -> Result<Array2<T>> {
        self.act(states)
    }
}
