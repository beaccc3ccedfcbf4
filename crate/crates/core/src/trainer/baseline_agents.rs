use ndarray::{Array2, ArrayView2};
use rand::RngCore;

use super::agent::{check_finite, tag, Agent, CriticLearner, StepMetrics, StepSettings};
use super::config::{Algorithm, TrainConfig};
use crate::baselines::{DeterministicPolicy, GaussianPolicy, MixtureNoise, MixturePolicy};
use crate::bounds::ActionBounds;
use crate::critic::{q_guidance_weight, QHead, TwinCritic};
use crate::dataset::Batch;
use crate::error::Result;
use crate::policy::Policy;
use crate::scalar::Scalar;
use crate::tensornet::{polyak_update, AdamState, ParamSet};

fn settings(cfg: &TrainConfig) -> StepSettings {
    StepSettings {
        eta: cfg.eta,
        gamma: cfg.gamma,
        rho: cfg.rho,
        backup: cfg.backup(),
        q_head: cfg.q_head,
        train_critic: true,
    }
}

/// Per-row Q values and `weight * dQ/da`, in the shape the actor losses expect.
fn q_and_grad<T: Scalar>(
    critic: &TwinCritic<T>,
    head: QHead,
    states: ArrayView2<'_, T>,
    actions: ArrayView2<'_, T>,
    weight: T,
) -> Result<(Vec<T>, Array2<T>)> {
    let (q, g) = critic.head_with_action_grad(head, states, actions, weight)?;
    Ok((q.to_vec(), g))
}

/// Maximum-likelihood unimodal Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct BcMleAgent<T> {
    pub policy: GaussianPolicy<T>,
    pub mean_opt: AdamState<T>,
    pub log_std_opt: AdamState<T>,
    pub step: u64,
}

impl<T: Scalar> BcMleAgent<T> {
    pub fn new(cfg: &TrainConfig, state_dim: usize, bounds: ActionBounds<T>, rng: &mut dyn RngCore) -> Result<Self> {
        let policy = GaussianPolicy::new(state_dim, cfg.hidden, cfg.depth, bounds, rng)?;
        let lr = T::of(cfg.actor_lr);
        Ok(Self {
            mean_opt: AdamState::new(&policy.mean, lr),
            log_std_opt: AdamState::new(&policy.log_std, lr),
            policy,
            step: 0,
        })
    }
}

impl<T: Scalar> Agent<T> for BcMleAgent<T> {
    fn algorithm(&self) -> Algorithm {
        Algorithm::BcMle
    }

    fn train_step(&mut self, batch: &Batch<T>, _rng: &mut dyn RngCore) -> Result<StepMetrics> {
        let step = self.step;
        let (l, g) = self
            .policy
            .gaussian_bc_loss_grad(batch.states.view(), batch.actions.view())
            .map_err(tag("actor", step))?;
        check_finite(l, "actor", step)?;
        if !g.log_std.all_finite() {
            return Err(tag("actor", step)(crate::error::Error::NonFinite {
                context: "log_std gradients".into(),
                step: 0,
            }));
        }
        self.mean_opt
            .step(&mut self.policy.mean, &g.mean)
            .map_err(tag("actor", step))?;
        self.log_std_opt
            .step(&mut self.policy.log_std, &g.log_std)
            .map_err(tag("actor", step))?;
        self.step += 1;
        Ok(StepMetrics {
            l_d: l.as_f64(),
            policy_loss: l.as_f64(),
            ..StepMetrics::default()
        })
    }

    fn policy(&self) -> &dyn Policy<T> {
        &self.policy
    }

    fn groups(&self) -> Vec<(&'static str, &ParamSet<T>)> {
        vec![
            ("policy", &self.policy.mean),
            ("log_std", &self.policy.log_std),
            ("adam.mean.m", &self.mean_opt.m),
            ("adam.mean.v", &self.mean_opt.v),
            ("adam.log_std.m", &self.log_std_opt.m),
            ("adam.log_std.v", &self.log_std_opt.v),
        ]
    }

    fn groups_mut(&mut self) -> Vec<(&'static str, &mut ParamSet<T>)> {
        vec![
            ("policy", &mut self.policy.mean),
            ("log_std", &mut self.policy.log_std),
            ("adam.mean.m", &mut self.mean_opt.m),
            ("adam.mean.v", &mut self.mean_opt.v),
            ("adam.log_std.m", &mut self.log_std_opt.m),
            ("adam.log_std.v", &mut self.log_std_opt.v),
        ]
    }

    fn counters(&self) -> Vec<(&'static str, u64)> {
        vec![
            ("step", self.step),
            ("adam.mean.step", self.mean_opt.step),
            ("adam.log_std.step", self.log_std_opt.step),
        ]
    }

    fn counters_mut(&mut self) -> Vec<(&'static str, &mut u64)> {
        vec![
            ("step", &mut self.step),
            ("adam.mean.step", &mut self.mean_opt.step),
            ("adam.log_std.step", &mut self.log_std_opt.step),
        ]
    }

    fn as_any(&self) -> &dyn std::any::Any {
        self
    }

    fn optimizers_mut(&mut self) -> Vec<&mut AdamState<T>> {
        vec![&mut self.mean_opt, &mut self.log_std_opt]
    }
}

/// Maximum-likelihood Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct MdnAgent<T> {
    pub policy: MixturePolicy<T>,
    pub opt: AdamState<T>,
    pub step: u64,
}

impl<T: Scalar> MdnAgent<T> {
    pub fn new(cfg: &TrainConfig, state_dim: usize, bounds: ActionBounds<T>, rng: &mut dyn RngCore) -> Result<Self> {
        let policy = MixturePolicy::new(state_dim, cfg.hidden, cfg.depth, cfg.mixtures, bounds, rng)?;
        Ok(Self {
            opt: AdamState::new(&policy.params, T::of(cfg.actor_lr)),
            policy,
            step: 0,
        })
    }
}

impl<T: Scalar> Agent<T> for MdnAgent<T> {
    fn algorithm(&self) -> Algorithm {
        Algorithm::Mdn
    }

    fn train_step(&mut self, batch: &Batch<T>, _rng: &mut dyn RngCore) -> Result<StepMetrics> {
        let step = self.step;
        let (l, g) = self
            .policy
            .mdn_loss_grad(batch.states.view(), batch.actions.view())
            .map_err(tag("actor", step))?;
        check_finite(l, "actor", step)?;
        self.opt.step(&mut self.policy.params, &g).map_err(tag("actor", step))?;
        self.step += 1;
        Ok(StepMetrics {
            l_d: l.as_f64(),
            policy_loss: l.as_f64(),
            ..StepMetrics::default()
        })
    }

    fn policy(&self) -> &dyn Policy<T> {
        &self.policy
    }

    fn groups(&self) -> Vec<(&'static str, &ParamSet<T>)> {
        vec![
            ("policy", &self.policy.params),
            ("adam.actor.m", &self.opt.m),
            ("adam.actor.v", &self.opt.v),
        ]
    }

    fn groups_mut(&mut self) -> Vec<(&'static str, &mut ParamSet<T>)> {
        vec![
            ("policy", &mut self.policy.params),
            ("adam.actor.m", &mut self.opt.m),
            ("adam.actor.v", &mut self.opt.v),
        ]
    }

    fn counters(&self) -> Vec<(&'static str, u64)> {
        vec![("step", self.step), ("adam.actor.step", self.opt.step)]
    }

    fn counters_mut(&mut self) -> Vec<(&'static str, &mut u64)> {
        vec![("step", &mut self.step), ("adam.actor.step", &mut self.opt.step)]
    }

    fn as_any(&self) -> &dyn std::any::Any {
        self
    }

    fn optimizers_mut(&mut self) -> Vec<&mut AdamState<T>> {
        vec![&mut self.opt]
    }
}

/// Actor-critic with a behavior-cloning term: `P` is the actor type
/// (deterministic for TD3+BC, a Gaussian mixture for the GM variant).
#[derive(Debug, Clone, PartialEq)]
pub struct Td3BcAgent<P, T> {
    pub actor: P,
    pub actor_target: P,
    pub critics: CriticLearner<T>,
    pub actor_opt: AdamState<T>,
    pub step: u64,
    pub settings: StepSettings,
    pub policy_delay: u64,
    /// Bit patterns of the latest actor `(bc, q)` terms, kept as counters so
    /// resumed runs log the same values.
    last: (u64, u64),
}

/// Actor-specific part of the TD3+BC update.
pub trait BcActor<T: Scalar>: Policy<T> + Clone + Send + 'static {
    const ALGORITHM: Algorithm;

    fn params(&self) -> &ParamSet<T>;

    fn params_mut(&mut self) -> &mut ParamSet<T>;

    /// Returns `(bc term, q term, gradient)` for Q weight `alpha`.
    fn loss_grad(
        &self,
        critic: &TwinCritic<T>,
        head: QHead,
        batch: &Batch<T>,
        alpha: T,
        rng: &mut dyn RngCore,
    ) -> Result<(T, T, ParamSet<T>)>;
}

impl<T: Scalar> BcActor<T> for DeterministicPolicy<T> {
    const ALGORITHM: Algorithm = Algorithm::Td3bc;

    fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    fn loss_grad(
        &self,
        critic: &TwinCritic<T>,
        head: QHead,
        batch: &Batch<T>,
        alpha: T,
        _rng: &mut dyn RngCore,
    ) -> Result<(T, T, ParamSet<T>)> {
        let s = batch.states.view();
        let (l, g) = self.td3bc_loss_grad(s, batch.actions.view(), alpha, |a, w| q_and_grad(critic, head, s, a, w))?;
        Ok((l.bc, l.q, g))
    }
}

impl<T: Scalar> BcActor<T> for MixturePolicy<T> {
    const ALGORITHM: Algorithm = Algorithm::Td3bcGm;

    fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    fn loss_grad(
        &self,
        critic: &TwinCritic<T>,
        head: QHead,
        batch: &Batch<T>,
        alpha: T,
        rng: &mut dyn RngCore,
    ) -> Result<(T, T, ParamSet<T>)> {
        let s = batch.states.view();
        let noise = MixtureNoise::sample(rng, batch.len(), batch.action_dim());
        self.guided_loss_grad(s, batch.actions.view(), alpha, &noise, |a, w| {
            q_and_grad(critic, head, s, a, w)
        })
    }
}

impl<P: BcActor<T>, T: Scalar> Td3BcAgent<P, T> {
    pub fn from_actor(cfg: &TrainConfig, actor: P, critic: TwinCritic<T>) -> Self {
        Self {
            actor_target: actor.clone(),
            actor_opt: AdamState::new(actor.params(), T::of(cfg.actor_lr)),
            actor,
            critics: CriticLearner::new(critic, cfg.critic_lr),
            step: 0,
            settings: settings(cfg),
            policy_delay: cfg.policy_delay as u64,
            last: (0, 0),
        }
    }

    fn actor_update(&mut self, batch: &Batch<T>, mean_abs_q: T, rng: &mut dyn RngCore) -> Result<()> {
        let step = self.step;
        let alpha = q_guidance_weight(T::of(self.settings.eta), mean_abs_q);
        let (bc, q, g) = self
            .actor
            .loss_grad(&self.critics.critic, self.settings.q_head, batch, alpha, rng)
            .map_err(tag("actor", step))?;
        check_finite(bc + q, "actor", step)?;
        self.actor_opt
            .step(self.actor.params_mut(), &g)
            .map_err(tag("actor", step))?;
        self.last = (bc.as_f64().to_bits(), q.as_f64().to_bits());
        Ok(())
    }
}

impl<P: BcActor<T>, T: Scalar> Agent<T> for Td3BcAgent<P, T> {
    fn algorithm(&self) -> Algorithm {
        P::ALGORITHM
    }

    /// Critic update every step; actor update and Polyak averaging every
    /// `policy_delay` steps. Logged actor terms are from the latest actor update.
    fn train_step(&mut self, batch: &Batch<T>, rng: &mut dyn RngCore) -> Result<StepMetrics> {
        let step = self.step;
        let s = self.settings;
        let saved = self.critics.clone();
        let critic_loss = self.critics.update(&self.actor_target, batch, &s, rng, step)?;
        let mean_abs_q = self.critics.mean_abs_q(batch.states.view(), batch.actions.view())?;
        if step % self.policy_delay == 0 {
            if let Err(e) = self.actor_update(batch, mean_abs_q, rng) {
                self.critics = saved;
                return Err(e);
            }
            polyak_update(self.actor_target.params_mut(), self.actor.params(), T::of(s.rho))?;
            self.critics.polyak(s.rho)?;
        }
        self.step += 1;
        let (l_d, l_q) = (f64::from_bits(self.last.0), f64::from_bits(self.last.1));
        Ok(StepMetrics {
            l_d,
            l_q,
            policy_loss: l_d + l_q,
            critic_loss: critic_loss.as_f64(),
            mean_abs_q: mean_abs_q.as_f64(),
        })
    }

    fn policy(&self) -> &dyn Policy<T> {
        &self.actor
    }

    fn groups(&self) -> Vec<(&'static str, &ParamSet<T>)> {
        let mut g = vec![
            ("policy", self.actor.params()),
            ("policy_target", self.actor_target.params()),
            ("adam.actor.m", &self.actor_opt.m),
            ("adam.actor.v", &self.actor_opt.v),
        ];
        g.extend(self.critics.groups());
        g
    }

    fn groups_mut(&mut self) -> Vec<(&'static str, &mut ParamSet<T>)> {
        let mut g = vec![
            ("policy", self.actor.params_mut()),
            ("policy_target", self.actor_target.params_mut()),
            ("adam.actor.m", &mut self.actor_opt.m),
            ("adam.actor.v", &mut self.actor_opt.v),
        ];
        g.extend(self.critics.groups_mut());
        g
    }

    fn counters(&self) -> Vec<(&'static str, u64)> {
        let mut c = vec![
            ("step", self.step),
            ("adam.actor.step", self.actor_opt.step),
            ("last.l_d_bits", self.last.0),
            ("last.l_q_bits", self.last.1),
        ];
        c.extend(self.critics.counters());
        c
    }

    fn counters_mut(&mut self) -> Vec<(&'static str, &mut u64)> {
        let mut c = vec![
            ("step", &mut self.step),
            ("adam.actor.step", &mut self.actor_opt.step),
            ("last.l_d_bits", &mut self.last.0),
            ("last.l_q_bits", &mut self.last.1),
        ];
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
