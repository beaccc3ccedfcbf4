use ndarray::{Array2, ArrayView2};
use rand::RngCore;

use crate::bounds::ActionBounds;
use crate::error::{Error, Result};
use crate::policy::{check_cols, standard_normal, Policy};
use crate::scalar::Scalar;
use crate::tensornet::{MlpSpec, ParamSet};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LOG_TWO_PI: f64 = 0.918_938_533_204_672_8;

/// Log density of a diagonal Gaussian with log-std `ls` (already clamped).
pub(crate) fn diag_log_density<T: Scalar>(a: &[T], mean: &[T], ls: &[T]) -> T {
    let mut acc = T::zero();
    for d in 0..a.len() {
        let z = (a[d] - mean[d]) / ls[d].exp();
        acc -= T::of(0.5) * z * z + ls[d] + T::of(HALF_LOG_TWO_PI);
    }
    acc
}

pub(crate) fn clamp_log_std<T: Scalar>(v: T) -> (T, bool) {
    let lo = T::of(LOG_STD_MIN);
    let hi = T::of(LOG_STD_MAX);
    if v < lo {
        (lo, false)
    } else if v > hi {
        (hi, false)
    } else {
        (v, true)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianGrads<T> {
    pub mean: ParamSet<T>,
    pub log_std: ParamSet<T>,
}

/// Unimodal diagonal Gaussian: state-conditioned mean network and a
/// state-independent learned log-std, clamped to `[-5, 2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy<T> {
    pub mean: ParamSet<T>,
    /// Single `1 x action_dim` entry named `log_std`.
    pub log_std: ParamSet<T>,
    net: MlpSpec,
    bounds: ActionBounds<T>,
}

impl<T: Scalar> GaussianPolicy<T> {
    pub fn new(
        state_dim: usize,
        hidden: usize,
        depth: usize,
        bounds: ActionBounds<T>,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        let net = MlpSpec::new(state_dim, hidden, depth, bounds.dim());
        net.validate()?;
        let mean = net.init(rng);
        let mut log_std = ParamSet::new();
        log_std.push("log_std", Array2::zeros((1, bounds.dim())));
        Self::from_params(net, mean, log_std, bounds)
    }

    pub fn from_params(net: MlpSpec, mean: ParamSet<T>, log_std: ParamSet<T>, bounds: ActionBounds<T>) -> Result<Self> {
        net.check_params(&mean)?;
        if log_std.len() != 1 || log_std.array(0).dim() != (1, bounds.dim()) || net.output != bounds.dim() {
            return Err(Error::DimensionMismatch {
                what: "gaussian log_std",
                expected: bounds.dim(),
                got: log_std.num_scalars(),
            });
        }
        Ok(Self {
            mean,
            log_std,
            net,
            bounds,
        })
    }

    pub fn net_spec(&self) -> &MlpSpec {
        &self.net
    }

    pub fn clamped_log_std(&self) -> Vec<T> {
        self.log_std.array(0).iter().map(|&v| clamp_log_std(v).0).collect()
    }

    pub fn mean_actions(&self, states: ArrayView2<T>) -> Result<Array2<T>> {
        self.net.forward(&self.mean, states)
    }

    /// Mean negative log-likelihood of `actions` under the policy.
    pub fn gaussian_bc_loss(&self, states: ArrayView2<T>, actions: ArrayView2<T>) -> Result<T> {
        Ok(self.loss_impl(states, actions, false)?.0)
    }

    pub fn gaussian_bc_loss_grad(
        &self,
        states: ArrayView2<T>,
        actions: ArrayView2<T>,
    ) -> Result<(T, GaussianGrads<T>)> {
        let (l, g) = self.loss_impl(states, actions, true)?;
        Ok((l, g.expect("requested")))
    }

    fn loss_impl(
        &self,
        states: ArrayView2<T>,
        actions: ArrayView2<T>,
        with_grad: bool,
    ) -> Result<(T, Option<GaussianGrads<T>>)> {
        if states.nrows() == 0 {
            return Err(Error::EmptyBatch("gaussian_bc_loss"));
        }
        check_cols(&actions, self.bounds.dim(), "gaussian action")?;
        let (mu, tape) = self.net.forward_taped(&self.mean, states)?;
        let ls: Vec<(T, bool)> = self.log_std.array(0).iter().map(|&v| clamp_log_std(v)).collect();
        let lsv: Vec<T> = ls.iter().map(|p| p.0).collect();
        let b = T::of(states.nrows() as f64);
        let mut loss = T::zero();
        let mut d_mu = Array2::zeros(mu.raw_dim());
        let mut d_ls = Array2::zeros((1, lsv.len()));
        for r in 0..mu.nrows() {
            let a = actions.row(r).to_vec();
            let m = mu.row(r).to_vec();
            loss -= diag_log_density(&a, &m, &lsv);
            for d in 0..a.len() {
                let var = (T::of(2.0) * lsv[d]).exp();
                let z2 = (a[d] - m[d]) * (a[d] - m[d]) / var;
                d_mu[[r, d]] = -(a[d] - m[d]) / var / b;
                if ls[d].1 {
                    d_ls[[0, d]] += (T::one() - z2) / b;
                }
            }
        }
        loss = loss / b;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                context: "gaussian_bc_loss".into(),
                step: 0,
            });
        }
        let grads = with_grad.then(|| {
            let mut gm = self.mean.zeros_like();
            self.net.backward(&self.mean, &tape, d_mu, Some(&mut gm));
            let mut gl = self.log_std.zeros_like();
            *gl.array_mut(0) += &d_ls;
            GaussianGrads { mean: gm, log_std: gl }
        });
        Ok((loss, grads))
    }
}

impl<T: Scalar> Policy<T> for GaussianPolicy<T> {
    fn state_dim(&self) -> usize {
        self.net.input
    }

    fn action_dim(&self) -> usize {
        self.bounds.dim()
    }

    fn bounds(&self) -> &ActionBounds<T> {
        &self.bounds
    }

    fn sample_batch(&self, states: ArrayView2<T>, rng: &mut dyn RngCore) -> Result<Array2<T>> {
        let mut a = self.mean_actions(states)?;
        let z = standard_normal::<T>(rng, a.nrows(), a.ncols());
        let std: Vec<T> = self.clamped_log_std().into_iter().map(T::exp).collect();
        for ((r, d), v) in a.indexed_iter_mut() {
            *v += std[d] * z[[r, d]];
        }
        self.bounds.clamp_rows(&mut a);
        Ok(a)
    }
}
