use ndarray::ArrayView2;
use rand::RngCore;

use super::agent::{check_finite, tag, Agent, CriticLearner, StepMetrics, StepSettings};
use super::config::{Algorithm, TrainConfig};
use crate::bounds::ActionBounds;
use crate::critic::{q_guidance_weight, TwinCritic};
use crate::dataset::Batch;
use crate::diffusion::{ChainNoise, DiffusionPolicy, NoiseBatch};
use crate::error::Result;
use crate::policy::Policy;
use crate::scalar::Scalar;
use crate::tensornet::{polyak_update, AdamState, ParamSet};

/// Points inside [`TrainState::train_step_probed`] at which the probe runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepPhase {
    CriticUpdated,
    ActorUpdated,
    TargetsUpdated,
}

/// Diffusion policy, twin critics, their targets and optimizers.
#[derive(Debug, Clone)]
pub struct TrainState<T> {
    pub policy: DiffusionPolicy<T>,
    pub target_policy: DiffusionPolicy<T>,
    pub critics: CriticLearner<T>,
    pub actor_opt: AdamState<T>,
    pub step: u64,
    pub settings: StepSettings,
    algorithm: Algorithm,
}

impl<T: Scalar> TrainState<T> {
    /// Initializes the policy, then both critics, from `rng`.
    pub fn new(cfg: &TrainConfig, state_dim: usize, bounds: ActionBounds<T>, rng: &mut dyn RngCore) -> Result<Self> {
        let action_dim = bounds.dim();
        let policy = DiffusionPolicy::new(&cfg.diffusion(), state_dim, bounds, rng)?;
        let critic = TwinCritic::new(state_dim, action_dim, cfg.hidden, cfg.depth, rng)?;
        let bc_only = cfg.algorithm == Algorithm::BcDiffusion;
        Ok(Self {
            target_policy: policy.clone(),
            actor_opt: AdamState::new(&policy.params, T::of(cfg.actor_lr)),
            policy,
            critics: CriticLearner::new(critic, cfg.critic_lr),
            step: 0,
            settings: StepSettings {
                eta: if bc_only { 0.0 } else { cfg.eta },
                gamma: cfg.gamma,
                rho: cfg.rho,
                backup: cfg.backup(),
                q_head: cfg.q_head,
                train_critic: !bc_only,
            },
            algorithm: if bc_only {
                Algorithm::BcDiffusion
            } else {
                Algorithm::DiffusionQl
            },
        })
    }

    /// One step: critic regression, then the actor objective
    /// `L_d - alpha * mean Q(s, a0)` against the freshly updated critic, then
    /// Polyak averaging of every target. Randomness is drawn in the order
    /// next-action samples, denoising noise, chain noise.
    ///
    /// On a non-finite loss the step is rolled back and the error names the
    /// component.
    pub fn train_step_probed(
        &mut self,
        batch: &Batch<T>,
        rng: &mut dyn RngCore,
        probe: &mut dyn FnMut(StepPhase, &Self),
    ) -> Result<StepMetrics> {
        let step = self.step;
        let s = self.settings;
        let saved = self.critics.clone();
        let critic_loss = if s.train_critic {
            self.critics.update(&self.target_policy, batch, &s, rng, step)?
        } else {
            T::zero()
        };
        probe(StepPhase::CriticUpdated, self);
        let actor = self.actor_update(batch, rng);
        let (l_d, l_q, mean_abs_q) = match actor {
            Ok(v) => v,
            Err(e) => {
                self.critics = saved;
                return Err(e);
            }
        };
        probe(StepPhase::ActorUpdated, self);
        polyak_update(&mut self.target_policy.params, &self.policy.params, T::of(s.rho))?;
        if s.train_critic {
            self.critics.polyak(s.rho)?;
        }
        self.step += 1;
        probe(StepPhase::TargetsUpdated, self);
        Ok(StepMetrics {
            l_d: l_d.as_f64(),
            l_q: l_q.as_f64(),
            policy_loss: (l_d + l_q).as_f64(),
            critic_loss: critic_loss.as_f64(),
            mean_abs_q: mean_abs_q.as_f64(),
        })
    }

    fn actor_update(&mut self, batch: &Batch<T>, rng: &mut dyn RngCore) -> Result<(T, T, T)> {
        let step = self.step;
        let s = self.settings;
        let (states, actions) = (batch.states.view(), batch.actions.view());
        let (b, n, ad) = (batch.len(), self.policy.n_steps(), batch.action_dim());
        let noise = NoiseBatch::sample(rng, b, n, ad);
        let (l_d, mut grads) = self
            .policy
            .bc_loss_grad(states, actions, &noise)
            .map_err(tag("actor", step))?;
        let mean_abs_q = if s.train_critic {
            self.critics.mean_abs_q(states, actions)?
        } else {
            T::zero()
        };
        let mut l_q = T::zero();
        if s.train_critic && s.eta > 0.0 {
            let alpha = q_guidance_weight(T::of(s.eta), mean_abs_q);
            l_q = self.q_term(states, alpha, rng, &mut grads)?;
        }
        check_finite(l_d + l_q, "actor", step)?;
        self.actor_opt
            .step(&mut self.policy.params, &grads)
            .map_err(tag("actor", step))?;
        Ok((l_d, l_q, mean_abs_q))
    }

    /// Adds the gradient of `-alpha * mean Q(s, a0)` to `grads` and returns the term.
    fn q_term(&self, states: ArrayView2<T>, alpha: T, rng: &mut dyn RngCore, grads: &mut ParamSet<T>) -> Result<T> {
        let b = states.nrows();
        let chain = ChainNoise::sample(rng, b, self.policy.action_dim(), self.policy.n_steps());
        let (a0, tape) = self.policy.sample_chain_taped(states, &chain)?;
        let weight = -alpha / T::of(b as f64);
        let (q, d_a0) = self
            .critics
            .critic
            .head_with_action_grad(self.settings.q_head, states, a0.view(), weight)?;
        self.policy.backprop_chain(&tape, d_a0, grads)?;
        Ok(-alpha * q.mean().unwrap_or_else(T::zero))
    }
}

impl<T: Scalar> Agent<T> for TrainState<T> {
    fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    fn train_step(&mut self, batch: &Batch<T>, rng: &mut dyn RngCore) -> Result<StepMetrics> {
        self.train_step_probed(batch, rng, &mut |_, _| {})
    }

    fn policy(&self) -> &dyn Policy<T> {
        &self.policy
    }

    fn groups(&self) -> Vec<(&'static str, &ParamSet<T>)> {
        let mut g = vec![
            ("policy", &self.policy.params),
            ("policy_target", &self.target_policy.params),
            ("adam.actor.m", &self.actor_opt.m),
            ("adam.actor.v", &self.actor_opt.v),
        ];
        g.extend(self.critics.groups());
        g
    }

    fn groups_mut(&mut self) -> Vec<(&'static str, &mut ParamSet<T>)> {
        let mut g = vec![
            ("policy", &mut self.policy.params),
            ("policy_target", &mut self.target_policy.params),
            ("adam.actor.m", &mut self.actor_opt.m),
            ("adam.actor.v", &mut self.actor_opt.v),
        ];
        g.extend(self.critics.groups_mut());
        g
    }

    fn counters(&self) -> Vec<(&'static str, u64)> {
        let mut c = vec![("step", self.step), ("adam.actor.step", self.actor_opt.step)];
        c.extend(self.critics.counters());
        c
    }

    fn counters_mut(&mut self) -> Vec<(&'static str, &mut u64)> {
        let mut c = vec![("step", &mut self.step), ("adam.actor.step", &mut self.actor_opt.step)];
        c.extend(self.critics.counters_mut());
        c
    }

    fn as_any(&self) -> &dyn std::any::Any {
        self
    }

    fn optimizers_mut(&mut self) -> Vec<&mut AdamState<T>> {
        let mut o = vec![&mut self.actor_opt];
        o.extend(self.critics.optimizers_mut());
        o
    }
}
