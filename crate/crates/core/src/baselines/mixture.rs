use ndarray::{Array2, ArrayView2};
use rand::{Rng, RngCore};

use super::gaussian::{clamp_log_std, diag_log_density};
use crate::bounds::ActionBounds;
use crate::error::{Error, Result};
use crate::policy::{check_cols, standard_normal, Policy};
use crate::scalar::Scalar;
use crate::tensornet::{MlpSpec, MlpTape, ParamSet};

/// Per-row mixture parameters decoded from the network output.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams<T> {
    /// `[k]` log mixture weights (log-softmax of the logits).
    pub log_weights: Vec<T>,
    /// `[k][d]` means.
    pub means: Vec<Vec<T>>,
    /// `[k][d]` clamped log-stds.
    pub log_stds: Vec<Vec<T>>,
}

/// Randomness for one reparameterized draw per row: component choice
/// uniforms and standard normals.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureNoise<T> {
    pub uniform: Vec<f64>,
    pub normal: Array2<T>,
}

impl<T: Scalar> MixtureNoise<T> {
    pub fn sample(rng: &mut dyn RngCore, batch: usize, action_dim: usize) -> Self {
        let uniform = (0..batch).map(|_| rng.random::<f64>()).collect();
        let normal = standard_normal(rng, batch, action_dim);
        Self { uniform, normal }
    }
}

/// Mixture density network: a state-conditioned mixture of `k` diagonal
/// Gaussians. Output layout is `[logits (k) | means (k*d) | log-stds (k*d)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixturePolicy<T> {
    pub params: ParamSet<T>,
    net: MlpSpec,
    k: usize,
    bounds: ActionBounds<T>,
}

fn log_sum_exp<T: Scalar>(xs: &[T]) -> T {
    let m = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if m == T::neg_infinity() {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<T>().ln()
}

impl<T: Scalar> MixturePolicy<T> {
    pub fn spec_for(state_dim: usize, hidden: usize, depth: usize, k: usize, action_dim: usize) -> MlpSpec {
        MlpSpec::new(state_dim, hidden, depth, k * (1 + 2 * action_dim))
    }

    pub fn new(
        state_dim: usize,
        hidden: usize,
        depth: usize,
        k: usize,
        bounds: ActionBounds<T>,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::config("mixtures", "must be at least 1"));
        }
        let net = Self::spec_for(state_dim, hidden, depth, k, bounds.dim());
        net.validate()?;
        let mut params = net.init(rng);
        // Spread the initial component means over the action box so the
        // components do not start on top of each other.
        let d = bounds.dim();
        let center = bounds.center();
        let half = bounds.half_width();
        let last = params.len() - 1;
        let bias = params.array_mut(last);
        for j in 0..k {
            for a in 0..d {
                let u: f64 = rng.random_range(-0.5..0.5);
                bias[[0, k + j * d + a]] = center[a] + half[a] * T::of(u);
            }
        }
        Self::from_params(net, params, k, bounds)
    }

    pub fn from_params(net: MlpSpec, params: ParamSet<T>, k: usize, bounds: ActionBounds<T>) -> Result<Self> {
        net.check_params(&params)?;
        if k == 0 || net.output != k * (1 + 2 * bounds.dim()) {
            return Err(Error::DimensionMismatch {
                what: "mixture output",
                expected: k * (1 + 2 * bounds.dim()),
                got: net.output,
            });
        }
        Ok(Self { params, net, k, bounds })
    }

    pub fn components(&self) -> usize {
        self.k
    }

    pub fn net_spec(&self) -> &MlpSpec {
        &self.net
    }

    fn decode_row(&self, out: &[T]) -> (MixtureParams<T>, Vec<Vec<bool>>) {
        let (k, d) = (self.k, self.bounds.dim());
        let logits = &out[..k];
        let lse = log_sum_exp(logits);
        let log_weights = logits.iter().map(|&l| l - lse).collect();
        let means = (0..k).map(|j| out[k + j * d..k + (j + 1) * d].to_vec()).collect();
        let mut log_stds = Vec::with_capacity(k);
        let mut live = Vec::with_capacity(k);
        for j in 0..k {
            let raw = &out[k + k * d + j * d..k + k * d + (j + 1) * d];
            let (v, m): (Vec<T>, Vec<bool>) = raw.iter().map(|&x| clamp_log_std(x)).unzip();
            log_stds.push(v);
            live.push(m);
        }
        (
            MixtureParams {
                log_weights,
                means,
                log_stds,
            },
            live,
        )
    }

    pub fn mixture(&self, states: ArrayView2<T>) -> Result<Vec<MixtureParams<T>>> {
        let out = self.net.forward(&self.params, states)?;
        Ok(out.rows().into_iter().map(|r| self.decode_row(&r.to_vec()).0).collect())
    }

    /// Mean negative log-likelihood `-log sum_j w_j N(a; mu_j, sigma_j)`.
    pub fn mdn_loss(&self, states: ArrayView2<T>, actions: ArrayView2<T>) -> Result<T> {
        Ok(self.nll_impl(states, actions, false)?.0)
    }

    pub fn mdn_loss_grad(&self, states: ArrayView2<T>, actions: ArrayView2<T>) -> Result<(T, ParamSet<T>)> {
        let (l, g) = self.nll_impl(states, actions, true)?;
        Ok((l, g.expect("requested")))
    }

    /// Loss and gradient w.r.t. the raw network output, plus the tape.
    fn nll_output_grad(&self, states: ArrayView2<T>, actions: ArrayView2<T>) -> Result<(T, Array2<T>, MlpTape<T>)> {
        if states.nrows() == 0 {
            return Err(Error::EmptyBatch("mdn_loss"));
        }
        check_cols(&actions, self.bounds.dim(), "mixture action")?;
        if actions.nrows() != states.nrows() {
            return Err(Error::DimensionMismatch {
                what: "mixture batch rows",
                expected: states.nrows(),
                got: actions.nrows(),
            });
        }
        let (out, tape) = self.net.forward_taped(&self.params, states)?;
        let (k, d) = (self.k, self.bounds.dim());
        let b = T::of(states.nrows() as f64);
        let mut loss = T::zero();
        let mut d_out = Array2::zeros(out.raw_dim());
        for r in 0..out.nrows() {
            let a = actions.row(r).to_vec();
            let (mp, live) = self.decode_row(&out.row(r).to_vec());
            let joint: Vec<T> = (0..k)
                .map(|j| mp.log_weights[j] + diag_log_density(&a, &mp.means[j], &mp.log_stds[j]))
                .collect();
            let l = log_sum_exp(&joint);
            loss -= l;
            for j in 0..k {
                let resp = (joint[j] - l).exp();
                d_out[[r, j]] = (mp.log_weights[j].exp() - resp) / b;
                for c in 0..d {
                    let var = (T::of(2.0) * mp.log_stds[j][c]).exp();
                    let diff = a[c] - mp.means[j][c];
                    d_out[[r, k + j * d + c]] = -resp * diff / var / b;
                    if live[j][c] {
                        d_out[[r, k + k * d + j * d + c]] = -resp * (diff * diff / var - T::one()) / b;
                    }
                }
            }
        }
        let loss = loss / b;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                context: "mdn_loss".into(),
                step: 0,
            });
        }
        Ok((loss, d_out, tape))
    }

    fn nll_impl(
        &self,
        states: ArrayView2<T>,
        actions: ArrayView2<T>,
        with_grad: bool,
    ) -> Result<(T, Option<ParamSet<T>>)> {
        let (loss, d_out, tape) = self.nll_output_grad(states, actions)?;
        let grads = with_grad.then(|| {
            let mut g = self.params.zeros_like();
            self.net.backward(&self.params, &tape, d_out, Some(&mut g));
            g
        });
        Ok((loss, grads))
    }

    fn pick(log_weights: &[T], u: f64) -> usize {
        let mut acc = 0.0;
        for (j, lw) in log_weights.iter().enumerate() {
            acc += lw.as_f64().exp();
            if u < acc {
                return j;
            }
        }
        // Rounding can leave the cumulative sum just under 1.
        log_weights
            .iter()
            .enumerate()
            .rev()
            .find(|(_, lw)| lw.as_f64().exp() > 0.0)
            .map_or(log_weights.len() - 1, |(j, _)| j)
    }

    /// Reparameterized draw `mu_j + sigma_j * z`, clamped, where `j` is chosen
    /// by `noise.uniform`. Returns actions, chosen components, the clamp mask
    /// and the tape of the forward pass.
    fn draw(
        &self,
        states: ArrayView2<T>,
        noise: &MixtureNoise<T>,
    ) -> Result<(Array2<T>, Vec<usize>, Array2<T>, Array2<T>, MlpTape<T>)> {
        if noise.uniform.len() != states.nrows() || noise.normal.dim() != (states.nrows(), self.bounds.dim()) {
            return Err(Error::DimensionMismatch {
                what: "mixture noise rows",
                expected: states.nrows(),
                got: noise.uniform.len(),
            });
        }
        let (out, tape) = self.net.forward_taped(&self.params, states)?;
        let d = self.bounds.dim();
        let mut actions = Array2::zeros((states.nrows(), d));
        let mut chosen = Vec::with_capacity(states.nrows());
        for r in 0..out.nrows() {
            let (mp, _) = self.decode_row(&out.row(r).to_vec());
            let j = Self::pick(&mp.log_weights, noise.uniform[r]);
            for c in 0..d {
                actions[[r, c]] = mp.means[j][c] + mp.log_stds[j][c].exp() * noise.normal[[r, c]];
            }
            chosen.push(j);
        }
        let mask = self.bounds.clamp_rows_with_mask(&mut actions);
        Ok((actions, chosen, mask, out, tape))
    }

    pub fn sample_with_noise(&self, states: ArrayView2<T>, noise: &MixtureNoise<T>) -> Result<Array2<T>> {
        Ok(self.draw(states, noise)?.0)
    }

    /// Objective `NLL - alpha * mean Q(s, a~)` for the Gaussian-mixture TD3+BC
    /// variant, where `a~` is a reparameterized draw. `dq_da` must return, per
    /// row, the Q values and `weight * dQ/da` for the supplied weight.
    pub fn guided_loss_grad<F>(
        &self,
        states: ArrayView2<T>,
        actions: ArrayView2<T>,
        alpha: T,
        noise: &MixtureNoise<T>,
        dq_da: F,
    ) -> Result<(T, T, ParamSet<T>)>
    where
        F: FnOnce(ArrayView2<T>, T) -> Result<(Vec<T>, Array2<T>)>,
    {
        let (nll, mut d_out, tape) = self.nll_output_grad(states, actions)?;
        let (drawn, chosen, mask, out, _) = self.draw(states, noise)?;
        let b = T::of(states.nrows() as f64);
        let (q, g) = dq_da(drawn.view(), -alpha / b)?;
        let l_q = -alpha * q.iter().copied().sum::<T>() / b;
        let (k, d) = (self.k, self.bounds.dim());
        for r in 0..out.nrows() {
            let j = chosen[r];
            for c in 0..d {
                let ga = g[[r, c]] * mask[[r, c]];
                d_out[[r, k + j * d + c]] += ga;
                let raw = out[[r, k + k * d + j * d + c]];
                let (ls, live) = clamp_log_std(raw);
                if live {
                    d_out[[r, k + k * d + j * d + c]] += ga * ls.exp() * noise.normal[[r, c]];
                }
            }
        }
        let mut grads = self.params.zeros_like();
        self.net.backward(&self.params, &tape, d_out, Some(&mut grads));
        Ok((nll, l_q, grads))
    }
}

impl<T: Scalar> Policy<T> for MixturePolicy<T> {
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
        let noise = MixtureNoise::sample(rng, states.nrows(), self.bounds.dim());
        self.sample_with_noise(states, &noise)
    }
}
