//! Twin Q-networks with target copies, Bellman targets and the critic regression loss.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::dataset::{Batch, Transition};
use crate::error::{Error, Result};
use crate::policy::{check_cols, Policy};
use crate::scalar::Scalar;
use crate::tensornet::{MlpSpec, ParamSet};

/// Floor on the `E|Q|` denominator of the guidance weight.
pub const GUIDANCE_Q_FLOOR: f64 = 1e-6;

/// Which critic output drives policy improvement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QHead {
    #[default]
    First,
    Min,
    Mean,
}

/// Target rule for the critic regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backup {
    /// `r + gamma * min_i Q'_i(s', a')` with one sampled `a'`.
    Single,
    /// `r + gamma * max_k min_i Q'_i(s', a'_k)` over `k` sampled next actions.
    MaxQ { k: usize },
}

/// Evaluates `min(Q'_1, Q'_2)` with the target networks.
pub trait TargetQ<T: Scalar> {
    fn target_min_q(&self, states: ArrayView2<T>, actions: ArrayView2<T>) -> Result<Vec<T>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticGrads<T> {
    pub q1: ParamSet<T>,
    pub q2: ParamSet<T>,
}

/// Two online Q-networks `[s | a] -> R` and their Polyak-averaged targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TwinCritic<T> {
    pub q1: ParamSet<T>,
    pub q2: ParamSet<T>,
    pub q1_target: ParamSet<T>,
    pub q2_target: ParamSet<T>,
    spec: MlpSpec,
    state_dim: usize,
    action_dim: usize,
}

impl<T: Scalar> TwinCritic<T> {
    pub fn spec_for(state_dim: usize, action_dim: usize, hidden: usize, depth: usize) -> MlpSpec {
        MlpSpec::new(state_dim + action_dim, hidden, depth, 1)
    }

    pub fn new(
        state_dim: usize,
        action_dim: usize,
        hidden: usize,
        depth: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        let spec = Self::spec_for(state_dim, action_dim, hidden, depth);
        spec.validate()?;
        let q1 = spec.init(rng);
        let q2 = spec.init(rng);
        Self::from_params(spec, state_dim, q1.clone(), q2.clone(), q1, q2)
    }

    pub fn from_params(
        spec: MlpSpec,
        state_dim: usize,
        q1: ParamSet<T>,
        q2: ParamSet<T>,
        q1_target: ParamSet<T>,
        q2_target: ParamSet<T>,
    ) -> Result<Self> {
        if spec.output != 1 || spec.input <= state_dim {
            return Err(Error::config("critic", "network must map [s | a] to one value"));
        }
        for p in [&q1, &q2, &q1_target, &q2_target] {
            spec.check_params(p)?;
        }
        Ok(Self {
            action_dim: spec.input - state_dim,
            q1,
            q2,
            q1_target,
            q2_target,
            spec,
            state_dim,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn input(&self, states: ArrayView2<T>, actions: ArrayView2<T>) -> Result<Array2<T>> {
        check_cols(&states, self.state_dim, "critic state")?;
        check_cols(&actions, self.action_dim, "critic action")?;
        if states.nrows() != actions.nrows() {
            return Err(Error::DimensionMismatch {
                what: "critic batch rows",
                expected: states.nrows(),
                got: actions.nrows(),
            });
        }
        let mut x = Array2::zeros((states.nrows(), self.spec.input));
        x.slice_mut(s![.., ..self.state_dim]).assign(&states);
        x.slice_mut(s![.., self.state_dim..]).assign(&actions);
        Ok(x)
    }

    /// Batched evaluation of one parameter set (online or target).
    pub fn evaluate(&self, params: &ParamSet<T>, states: ArrayView2<T>, actions: ArrayView2<T>) -> Result<Array1<T>> {
        let x = self.input(states, actions)?;
        Ok(self.spec.forward(params, x.view())?.column(0).to_owned())
    }

    /// Online pair `(Q_1(s, a), Q_2(s, a))`.
    pub fn q_value(&self, state: &[T], action: &[T]) -> Result<(T, T)> {
        let s = ArrayView2::from_shape((1, state.len()), state).expect("row");
        let a = ArrayView2::from_shape((1, action.len()), action).expect("row");
        Ok((self.evaluate(&self.q1, s, a)?[0], self.evaluate(&self.q2, s, a)?[0]))
    }

    /// Guidance value per row together with `weight * dQ/da` per row.
    pub fn head_with_action_grad(
        &self,
        head: QHead,
        states: ArrayView2<T>,
        actions: ArrayView2<T>,
        weight: T,
    ) -> Result<(Array1<T>, Array2<T>)> {
        let x = self.input(states, actions)?;
        let b = x.nrows();
        let (y1, t1) = self.spec.forward_taped(&self.q1, x.view())?;
        let d_action = |params: &ParamSet<T>, tape, d: Array2<T>| {
            self.spec
                .backward(params, tape, d, None)
                .slice(s![.., self.state_dim..])
                .to_owned()
        };
        match head {
            QHead::First => {
                let g = d_action(&self.q1, &t1, Array2::from_elem((b, 1), weight));
                Ok((y1.column(0).to_owned(), g))
            }
            QHead::Min | QHead::Mean => {
                let (y2, t2) = self.spec.forward_taped(&self.q2, x.view())?;
                let (q, w1, w2): (Array1<T>, Array2<T>, Array2<T>) = if head == QHead::Min {
                    let pick: Vec<bool> = y1.iter().zip(y2.iter()).map(|(a, b)| a <= b).collect();
                    (
                        y1.iter().zip(y2.iter()).map(|(&a, &b)| a.min(b)).collect(),
                        Array2::from_shape_fn((b, 1), |(r, _)| if pick[r] { weight } else { T::zero() }),
                        Array2::from_shape_fn((b, 1), |(r, _)| if pick[r] { T::zero() } else { weight }),
                    )
                } else {
                    let half = weight / T::of(2.0);
                    (
                        (&y1.column(0) + &y2.column(0)) / T::of(2.0),
                        Array2::from_elem((b, 1), half),
                        Array2::from_elem((b, 1), half),
                    )
                };
                let g = d_action(&self.q1, &t1, w1) + d_action(&self.q2, &t2, w2);
                Ok((q, g))
            }
        }
    }

    /// Mean over the batch of `(y - Q_1)^2 + (y - Q_2)^2`; targets are constants.
    pub fn critic_loss(&self, targets: &[T], states: ArrayView2<T>, actions: ArrayView2<T>) -> Result<T> {
        self.critic_loss_impl(targets, states, actions, false).map(|(l, _)| l)
    }

    pub fn critic_loss_grad(
        &self,
        targets: &[T],
        states: ArrayView2<T>,
        actions: ArrayView2<T>,
    ) -> Result<(T, CriticGrads<T>)> {
        self.critic_loss_impl(targets, states, actions, true)
            .map(|(l, g)| (l, g.expect("gradients requested")))
    }

    fn critic_loss_impl(
        &self,
        targets: &[T],
        states: ArrayView2<T>,
        actions: ArrayView2<T>,
        with_grad: bool,
    ) -> Result<(T, Option<CriticGrads<T>>)> {
        if states.nrows() == 0 {
            return Err(Error::EmptyBatch("critic_loss"));
        }
        if targets.len() != states.nrows() {
            return Err(Error::DimensionMismatch {
                what: "critic targets",
                expected: states.nrows(),
                got: targets.len(),
            });
        }
        let x = self.input(states, actions)?;
        let y = Array2::from_shape_vec((targets.len(), 1), targets.to_vec()).expect("column");
        let b = T::of(targets.len() as f64);
        let mut loss = T::zero();
        let mut grads = Vec::with_capacity(2);
        for params in [&self.q1, &self.q2] {
            let (q, tape) = self.spec.forward_taped(params, x.view())?;
            let resid = q - &y;
            loss += resid.mapv(|v| v * v).sum() / b;
            if with_grad {
                let mut g = params.zeros_like();
                self.spec
                    .backward(params, &tape, resid * (T::of(2.0) / b), Some(&mut g));
                grads.push(g);
            }
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                context: "critic_loss".into(),
                step: 0,
            });
        }
        let grads = with_grad.then(|| {
            let q2 = grads.pop().expect("two grads");
            let q1 = grads.pop().expect("two grads");
            CriticGrads { q1, q2 }
        });
        Ok((loss, grads))
    }
}

impl<T: Scalar> TargetQ<T> for TwinCritic<T> {
    fn target_min_q(&self, states: ArrayView2<T>, actions: ArrayView2<T>) -> Result<Vec<T>> {
        let a = self.evaluate(&self.q1_target, states, actions)?;
        let b = self.evaluate(&self.q2_target, states, actions)?;
        Ok(a.iter().zip(b.iter()).map(|(&x, &y)| x.min(y)).collect())
    }
}

fn check_backup(gamma: f64, backup: Backup) -> Result<()> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::config("gamma", format!("{gamma} is outside [0, 1)")));
    }
    if let Backup::MaxQ { k: 0 } = backup {
        return Err(Error::config("max_q_samples", "must be at least 1"));
    }
    Ok(())
}

/// Bellman regression targets for a batch.
///
/// Terminal rows get `r`. For the rest, next actions are drawn from `policy`
/// (the target policy) and scored by `critic` with the min over both target
/// networks; with [`Backup::MaxQ`] each row draws `k` candidates and keeps the best.
/// No randomness is consumed when every row is terminal.
pub fn bellman_targets<T: Scalar, C: TargetQ<T> + ?Sized>(
    critic: &C,
    policy: &dyn Policy<T>,
    batch: &Batch<T>,
    gamma: f64,
    backup: Backup,
    rng: &mut dyn RngCore,
) -> Result<Vec<T>> {
    check_backup(gamma, backup)?;
    let mut targets = batch.rewards.to_vec();
    let live: Vec<usize> = (0..batch.len()).filter(|&r| !batch.terminals[r]).collect();
    if live.is_empty() {
        return Ok(targets);
    }
    let k = match backup {
        Backup::Single => 1,
        Backup::MaxQ { k } => k,
    };
    let rows: Vec<usize> = live.iter().flat_map(|&r| std::iter::repeat_n(r, k)).collect();
    let next_states = batch.next_states.select(Axis(0), &rows);
    let next_actions = policy.sample_batch(next_states.view(), rng)?;
    let q = critic.target_min_q(next_states.view(), next_actions.view())?;
    let g = T::of(gamma);
    for (j, &r) in live.iter().enumerate() {
        let best = q[j * k..(j + 1) * k].iter().copied().fold(T::neg_infinity(), T::max);
        targets[r] = batch.rewards[r] + g * best;
    }
    Ok(targets)
}

/// Single-transition form of [`bellman_targets`].
pub fn bellman_target<T: Scalar, C: TargetQ<T> + ?Sized>(
    critic: &C,
    policy: &dyn Policy<T>,
    t: &Transition<T>,
    gamma: f64,
    backup: Backup,
    rng: &mut dyn RngCore,
) -> Result<T> {
    let batch = Batch::from_transitions(std::slice::from_ref(t))?;
    Ok(bellman_targets(critic, policy, &batch, gamma, backup, rng)?[0])
}

/// `alpha = eta / max(mean_abs_q, 1e-6)`; a constant w.r.t. every parameter.
pub fn q_guidance_weight<T: Scalar>(eta: T, mean_abs_q: T) -> T {
    eta / mean_abs_q.max(T::of(GUIDANCE_Q_FLOOR))
}

#[cfg(test)]
mod tests;
