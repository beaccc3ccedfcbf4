use ndarray::{s, Array2, ArrayView2};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::schedule::{build_vp_schedule, NoiseSchedule, DEFAULT_BETA_MAX, DEFAULT_BETA_MIN};
use crate::bounds::ActionBounds;
use crate::error::{Error, Result};
use crate::policy::{check_cols, standard_normal, Policy};
use crate::scalar::Scalar;
use crate::tensornet::{time_embed, MlpSpec, MlpTape, ParamSet};

/// Architecture and schedule of a diffusion policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionConfig {
    pub n_steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub hidden: usize,
    pub depth: usize,
    pub embed_dim: usize,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            n_steps: 5,
            beta_min: DEFAULT_BETA_MIN,
            beta_max: DEFAULT_BETA_MAX,
            hidden: 256,
            depth: 3,
            embed_dim: 16,
        }
    }
}

/// Per-sample diffusion indices and Gaussian noise for one evaluation of the BC loss.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBatch<T> {
    pub steps: Vec<usize>,
    pub eps: Array2<T>,
}

impl<T: Scalar> NoiseBatch<T> {
    /// Draws `i ~ U{1..n}` for every row, then the noise matrix.
    pub fn sample(rng: &mut dyn RngCore, batch: usize, n: usize, action_dim: usize) -> Self {
        let steps = (0..batch).map(|_| rng.random_range(1..=n)).collect();
        let eps = standard_normal(rng, batch, action_dim);
        Self { steps, eps }
    }
}

/// All Gaussian draws of one run of the reverse chain, so a chain can be replayed exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainNoise<T> {
    /// Starting point `a^N`.
    pub init: Array2<T>,
    /// `per_step[i - 1]` is the noise injected at step `i`; entry 0 is unused.
    pub per_step: Vec<Array2<T>>,
}

impl<T: Scalar> ChainNoise<T> {
    /// Draws `a^N` first, then the step noises for `i = n, ..., 2`.
    pub fn sample(rng: &mut dyn RngCore, batch: usize, action_dim: usize, n: usize) -> Self {
        let init = standard_normal(rng, batch, action_dim);
        let mut per_step = vec![Array2::zeros((batch, action_dim)); n];
        for i in (2..=n).rev() {
            per_step[i - 1] = standard_normal(rng, batch, action_dim);
        }
        Self { init, per_step }
    }

    pub fn batch(&self) -> usize {
        self.init.nrows()
    }
}

/// Saved intermediates of a taped reverse chain, ordered from step `n` down to 1.
#[derive(Debug, Clone)]
pub struct ChainTape<T> {
    steps: Vec<(usize, MlpTape<T>, Array2<T>)>,
}

/// Conditional noise-prediction network plus the schedule it is trained for.
#[derive(Debug, Clone)]
pub struct DiffusionPolicy<T> {
    pub params: ParamSet<T>,
    net: MlpSpec,
    schedule: NoiseSchedule<T>,
    bounds: ActionBounds<T>,
    state_dim: usize,
    config: DiffusionConfig,
    // row i - 1 holds the embedding of step i
    embeddings: Array2<T>,
}

impl<T: Scalar> DiffusionPolicy<T> {
    pub fn new(
        config: &DiffusionConfig,
        state_dim: usize,
        bounds: ActionBounds<T>,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        let net = Self::net_spec_for(config, state_dim, bounds.dim());
        net.validate()?;
        let params = net.init(rng);
        Self::from_params(config, state_dim, bounds, params)
    }

    pub fn from_params(
        config: &DiffusionConfig,
        state_dim: usize,
        bounds: ActionBounds<T>,
        params: ParamSet<T>,
    ) -> Result<Self> {
        if state_dim == 0 {
            return Err(Error::config("state_dim", "must be at least 1"));
        }
        let net = Self::net_spec_for(config, state_dim, bounds.dim());
        net.validate()?;
        net.check_params(&params)?;
        let schedule = build_vp_schedule(config.n_steps, config.beta_min, config.beta_max)?;
        let mut embeddings = Array2::zeros((config.n_steps, config.embed_dim));
        for i in 1..=config.n_steps {
            let e = time_embed::<T>(i, config.embed_dim)?;
            embeddings.row_mut(i - 1).assign(&ndarray::Array1::from(e));
        }
        Ok(Self {
            params,
            net,
            schedule,
            bounds,
            state_dim,
            config: config.clone(),
            embeddings,
        })
    }

    fn net_spec_for(config: &DiffusionConfig, state_dim: usize, action_dim: usize) -> MlpSpec {
        MlpSpec::new(
            action_dim + state_dim + config.embed_dim,
            config.hidden,
            config.depth,
            action_dim,
        )
    }

    pub fn net_spec(&self) -> &MlpSpec {
        &self.net
    }

    pub fn schedule(&self) -> &NoiseSchedule<T> {
        &self.schedule
    }

    pub fn config(&self) -> &DiffusionConfig {
        &self.config
    }

    pub fn n_steps(&self) -> usize {
        self.schedule.n()
    }

    /// Rows `[a | s | embed(i_row)]`.
    fn net_input(
        &self,
        actions: ArrayView2<T>,
        states: ArrayView2<T>,
        step_of_row: impl Fn(usize) -> usize,
    ) -> Array2<T> {
        let (b, ad, sd) = (actions.nrows(), self.action_dim(), self.state_dim);
        let mut x = Array2::zeros((b, ad + sd + self.config.embed_dim));
        x.slice_mut(s![.., ..ad]).assign(&actions);
        x.slice_mut(s![.., ad..ad + sd]).assign(&states);
        for r in 0..b {
            x.slice_mut(s![r, ad + sd..])
                .assign(&self.embeddings.row(step_of_row(r) - 1));
        }
        x
    }

    fn check_batch(&self, states: &ArrayView2<T>, actions: Option<&ArrayView2<T>>) -> Result<()> {
        check_cols(states, self.state_dim, "policy state")?;
        if let Some(a) = actions {
            check_cols(a, self.action_dim(), "policy action")?;
            if a.nrows() != states.nrows() {
                return Err(Error::DimensionMismatch {
                    what: "batch rows",
                    expected: states.nrows(),
                    got: a.nrows(),
                });
            }
        }
        Ok(())
    }

    /// Network noise prediction `eps_theta(a^i, s, i)` for a whole batch at one step.
    pub fn predict_noise(&self, noisy: ArrayView2<T>, states: ArrayView2<T>, i: usize) -> Result<Array2<T>> {
        self.schedule.check_index(i)?;
        self.check_batch(&states, Some(&noisy))?;
        self.net
            .forward(&self.params, self.net_input(noisy, states, |_| i).view())
    }

    fn step_batch(
        &self,
        a: &Array2<T>,
        states: ArrayView2<T>,
        i: usize,
        noise: ArrayView2<T>,
        taped: bool,
    ) -> Result<(Array2<T>, Option<(MlpTape<T>, Array2<T>)>)> {
        let x = self.net_input(a.view(), states, |_| i);
        let (eps_hat, tape) = if taped {
            let (y, t) = self.net.forward_taped(&self.params, x.view())?;
            (y, Some(t))
        } else {
            (self.net.forward(&self.params, x.view())?, None)
        };
        let (keep, eps_coef, sigma) = self.schedule.reverse_coefficients(i);
        let mut next = a * keep - &(eps_hat * eps_coef);
        if sigma > T::zero() {
            next.scaled_add(sigma, &noise);
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "reverse diffusion chain".into(),
                step: i,
            });
        }
        let mask = self.bounds.clamp_rows_with_mask(&mut next);
        Ok((next, tape.map(|t| (t, mask))))
    }

    /// One reverse step `a^{i-1}` from `a^i`, clamped to the action box.
    ///
    /// The injected noise is ignored at `i = 1`.
    pub fn reverse_step(&self, ai: &[T], state: &[T], i: usize, eps: &[T]) -> Result<Vec<T>> {
        self.schedule.check_index(i)?;
        let row = |v: &[T]| Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("row");
        let a = row(ai);
        let s = row(state);
        let z = row(eps);
        self.check_batch(&s.view(), Some(&a.view()))?;
        check_cols(&z.view(), self.action_dim(), "reverse step noise")?;
        let (next, _) = self.step_batch(&a, s.view(), i, z.view(), false)?;
        Ok(next.into_raw_vec_and_offset().0)
    }

    fn check_noise(&self, states: &ArrayView2<T>, noise: &ChainNoise<T>) -> Result<()> {
        self.check_batch(states, None)?;
        if noise.per_step.len() != self.n_steps() {
            return Err(Error::DimensionMismatch {
                what: "chain noise steps",
                expected: self.n_steps(),
                got: noise.per_step.len(),
            });
        }
        if noise.init.nrows() != states.nrows() {
            return Err(Error::DimensionMismatch {
                what: "chain noise rows",
                expected: states.nrows(),
                got: noise.init.nrows(),
            });
        }
        check_cols(&noise.init.view(), self.action_dim(), "chain noise")
    }

    /// Runs the reverse chain `i = n, ..., 1` with fixed noise; a pure function of the parameters.
    pub fn sample_chain(&self, states: ArrayView2<T>, noise: &ChainNoise<T>) -> Result<Array2<T>> {
        self.check_noise(&states, noise)?;
        let mut a = noise.init.clone();
        for i in (1..=self.n_steps()).rev() {
            a = self.step_batch(&a, states, i, noise.per_step[i - 1].view(), false)?.0;
        }
        Ok(a)
    }

    /// Like [`DiffusionPolicy::sample_chain`] but records what the backward pass needs.
    pub fn sample_chain_taped(
        &self,
        states: ArrayView2<T>,
        noise: &ChainNoise<T>,
    ) -> Result<(Array2<T>, ChainTape<T>)> {
        self.check_noise(&states, noise)?;
        let mut a = noise.init.clone();
        let mut tape = ChainTape {
            steps: Vec::with_capacity(self.n_steps()),
        };
        for i in (1..=self.n_steps()).rev() {
            let (next, saved) = self.step_batch(&a, states, i, noise.per_step[i - 1].view(), true)?;
            let (net_tape, mask) = saved.expect("taped step");
            tape.steps.push((i, net_tape, mask));
            a = next;
        }
        Ok((a, tape))
    }

    /// Pathwise gradient through the whole chain: given `d_actions = dL/da^0`,
    /// accumulates `dL/dtheta` into `grads`. Chain noise is treated as constant
    /// and clipped coordinates pass no gradient.
    pub fn backprop_chain(&self, tape: &ChainTape<T>, d_actions: Array2<T>, grads: &mut ParamSet<T>) -> Result<()> {
        let ad = self.action_dim();
        let mut g = d_actions;
        for (i, net_tape, mask) in tape.steps.iter().rev() {
            g *= mask;
            let (keep, eps_coef, _) = self.schedule.reverse_coefficients(*i);
            let d_eps = &g * (-eps_coef);
            let d_input = self.net.backward(&self.params, net_tape, d_eps, Some(grads));
            let mut prev = g * keep;
            prev += &d_input.slice(s![.., ..ad]);
            if prev.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: "chain backward".into(),
                    step: *i,
                });
            }
            g = prev;
        }
        Ok(())
    }

    pub fn sample_actions(&self, states: ArrayView2<T>, rng: &mut dyn RngCore) -> Result<Array2<T>> {
        self.check_batch(&states, None)?;
        let noise = ChainNoise::sample(rng, states.nrows(), self.action_dim(), self.n_steps());
        self.sample_chain(states, &noise)
    }

    fn noised_input(
        &self,
        states: &ArrayView2<T>,
        actions: &ArrayView2<T>,
        noise: &NoiseBatch<T>,
    ) -> Result<Array2<T>> {
        if states.nrows() == 0 {
            return Err(Error::EmptyBatch("bc_loss"));
        }
        self.check_batch(states, Some(actions))?;
        if noise.steps.len() != states.nrows() || noise.eps.dim() != actions.dim() {
            return Err(Error::DimensionMismatch {
                what: "bc_loss noise batch",
                expected: states.nrows(),
                got: noise.steps.len(),
            });
        }
        for &i in &noise.steps {
            self.schedule.check_index(i)?;
        }
        let mut noisy = actions.to_owned();
        for (r, mut row) in noisy.rows_mut().into_iter().enumerate() {
            let ab = self.schedule.alpha_bar(noise.steps[r]);
            let (sa, sn) = (ab.sqrt(), (T::one() - ab).sqrt());
            row.zip_mut_with(&noise.eps.row(r), |a, &e| *a = sa * *a + sn * e);
        }
        Ok(self.net_input(noisy.view(), *states, |r| noise.steps[r]))
    }

    /// Mean over the batch of `||eps - eps_theta(sqrt(ab_i) a + sqrt(1 - ab_i) eps, s, i)||^2`.
    pub fn bc_loss(&self, states: ArrayView2<T>, actions: ArrayView2<T>, noise: &NoiseBatch<T>) -> Result<T> {
        let x = self.noised_input(&states, &actions, noise)?;
        let pred = self.net.forward(&self.params, x.view())?;
        let b = T::of(states.nrows() as f64);
        Ok((&noise.eps - &pred).mapv(|v| v * v).sum() / b)
    }

    /// [`DiffusionPolicy::bc_loss`] together with its parameter gradient.
    pub fn bc_loss_grad(
        &self,
        states: ArrayView2<T>,
        actions: ArrayView2<T>,
        noise: &NoiseBatch<T>,
    ) -> Result<(T, ParamSet<T>)> {
        let x = self.noised_input(&states, &actions, noise)?;
        let (pred, tape) = self.net.forward_taped(&self.params, x.view())?;
        let b = T::of(states.nrows() as f64);
        let resid = &pred - &noise.eps;
        let loss = resid.mapv(|v| v * v).sum() / b;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                context: "bc_loss".into(),
                step: 0,
            });
        }
        let mut grads = self.params.zeros_like();
        self.net
            .backward(&self.params, &tape, resid * (T::of(2.0) / b), Some(&mut grads));
        Ok((loss, grads))
    }
}

impl<T: Scalar> Policy<T> for DiffusionPolicy<T> {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn action_dim(&self) -> usize {
        self.bounds.dim()
    }

    fn bounds(&self) -> &ActionBounds<T> {
        &self.bounds
    }

    fn sample_batch(&self, states: ArrayView2<T>, rng: &mut dyn RngCore) -> Result<Array2<T>> {
        self.sample_actions(states, rng)
    }
}
