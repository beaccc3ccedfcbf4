use ndarray::ArrayView2;
use rand::RngCore;

use super::config::Algorithm;
use crate::critic::{bellman_targets, Backup, QHead, TwinCritic};
use crate::dataset::Batch;
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::scalar::Scalar;
use crate::tensornet::{polyak_update, AdamState, ParamSet};

/// Losses from one gradient step, in `f64` for logging.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepMetrics {
    pub l_d: f64,
    pub l_q: f64,
    /// Actor objective actually minimized; `l_d + l_q`.
    pub policy_loss: f64,
    pub critic_loss: f64,
    pub mean_abs_q: f64,
}

/// Per-step knobs shared by the actor-critic agents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSettings {
    pub eta: f64,
    pub gamma: f64,
    pub rho: f64,
    pub backup: Backup,
    pub q_head: QHead,
    pub train_critic: bool,
}

/// A trainable policy together with everything its update rule needs.
pub trait Agent<T: Scalar>: Send {
    fn algorithm(&self) -> Algorithm;

    /// One gradient step on `batch`; all randomness comes from `rng`.
    fn train_step(&mut self, batch: &Batch<T>, rng: &mut dyn RngCore) -> Result<StepMetrics>;

    /// The policy used for evaluation.
    fn policy(&self) -> &dyn Policy<T>;

    /// Every parameter array that defines the agent, including targets and
    /// optimizer moments, in a fixed order.
    fn groups(&self) -> Vec<(&'static str, &ParamSet<T>)>;

    fn groups_mut(&mut self) -> Vec<(&'static str, &mut ParamSet<T>)>;

    fn counters(&self) -> Vec<(&'static str, u64)>;

    fn counters_mut(&mut self) -> Vec<(&'static str, &mut u64)>;

    fn optimizers_mut(&mut self) -> Vec<&mut AdamState<T>>;

    /// Access to the concrete agent type.
    fn as_any(&self) -> &dyn std::any::Any;
}

/// Rewrites a non-finite error so it names the failing component and step.
pub(crate) fn tag(component: &'static str, step: u64) -> impl FnOnce(Error) -> Error {
    move |e| match e {
        Error::NonFinite { context, .. } => Error::NonFinite {
            context: format!("{component}: {context}"),
            step: step as usize,
        },
        other => other,
    }
}

pub(crate) fn check_finite<T: Scalar>(v: T, component: &'static str, step: u64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            context: format!("{component}: loss"),
            step: step as usize,
        })
    }
}

/// Twin critics and their optimizers.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticLearner<T> {
    pub critic: TwinCritic<T>,
    pub q1_opt: AdamState<T>,
    pub q2_opt: AdamState<T>,
}

impl<T: Scalar> CriticLearner<T> {
    pub fn new(critic: TwinCritic<T>, lr: f64) -> Self {
        let q1_opt = AdamState::new(&critic.q1, T::of(lr));
        let q2_opt = AdamState::new(&critic.q2, T::of(lr));
        Self { critic, q1_opt, q2_opt }
    }

    /// Regresses both critics onto Bellman targets built with `target_policy`.
    pub fn update(
        &mut self,
        target_policy: &dyn Policy<T>,
        batch: &Batch<T>,
        s: &StepSettings,
        rng: &mut dyn RngCore,
        step: u64,
    ) -> Result<T> {
        let targets =
            bellman_targets(&self.critic, target_policy, batch, s.gamma, s.backup, rng).map_err(tag("critic", step))?;
        let (loss, g) = self
            .critic
            .critic_loss_grad(&targets, batch.states.view(), batch.actions.view())
            .map_err(tag("critic", step))?;
        check_finite(loss, "critic", step)?;
        self.q1_opt
            .step(&mut self.critic.q1, &g.q1)
            .map_err(tag("critic", step))?;
        self.q2_opt
            .step(&mut self.critic.q2, &g.q2)
            .map_err(tag("critic", step))?;
        Ok(loss)
    }

    /// `E|Q_1(s, a)|` over the batch's data pairs.
    pub fn mean_abs_q(&self, states: ArrayView2<T>, actions: ArrayView2<T>) -> Result<T> {
        let q = self.critic.evaluate(&self.critic.q1, states, actions)?;
        Ok(q.mapv(|v| v.abs()).mean().unwrap_or_else(T::zero))
    }

    pub fn polyak(&mut self, rho: f64) -> Result<()> {
        polyak_update(&mut self.critic.q1_target, &self.critic.q1, T::of(rho))?;
        polyak_update(&mut self.critic.q2_target, &self.critic.q2, T::of(rho))
    }

    pub(crate) fn groups(&self) -> Vec<(&'static str, &ParamSet<T>)> {
        let c = &self.critic;
        vec![
            ("q1", &c.q1),
            ("q2", &c.q2),
            ("q1_target", &c.q1_target),
            ("q2_target", &c.q2_target),
            ("adam.q1.m", &self.q1_opt.m),
            ("adam.q1.v", &self.q1_opt.v),
            ("adam.q2.m", &self.q2_opt.m),
            ("adam.q2.v", &self.q2_opt.v),
        ]
    }

    pub(crate) fn groups_mut(&mut self) -> Vec<(&'static str, &mut ParamSet<T>)> {
        let c = &mut self.critic;
        vec![
            ("q1", &mut c.q1),
            ("q2", &mut c.q2),
            ("q1_target", &mut c.q1_target),
            ("q2_target", &mut c.q2_target),
            ("adam.q1.m", &mut self.q1_opt.m),
            ("adam.q1.v", &mut self.q1_opt.v),
            ("adam.q2.m", &mut self.q2_opt.m),
            ("adam.q2.v", &mut self.q2_opt.v),
        ]
    }

    pub(crate) fn counters(&self) -> Vec<(&'static str, u64)> {
        vec![("adam.q1.step", self.q1_opt.step), ("adam.q2.step", self.q2_opt.step)]
    }

    pub(crate) fn counters_mut(&mut self) -> Vec<(&'static str, &mut u64)> {
        vec![
            ("adam.q1.step", &mut self.q1_opt.step),
            ("adam.q2.step", &mut self.q2_opt.step),
        ]
    }

    pub(crate) fn optimizers_mut(&mut self) -> Vec<&mut AdamState<T>> {
        vec![&mut self.q1_opt, &mut self.q2_opt]
    }
}
