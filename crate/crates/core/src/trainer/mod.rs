//! The actor-critic training loop, its agents, checkpoints, metrics and
//! offline checkpoint selection.

mod agent;
mod baseline_agents;
mod checkpoint;
mod config;
mod run;
mod selection;
mod state;

use rand::RngCore;

pub use agent::{Agent, CriticLearner, StepMetrics, StepSettings};
pub use baseline_agents::{BcActor, BcMleAgent, MdnAgent, Td3BcAgent};
pub use checkpoint::{Checkpoint, NamedArray, RngSnapshot, CHECKPOINT_MAGIC};
pub use config::{Algorithm, TrainConfig};
pub use run::{
    checkpoint_file_name, cosine_lr_scale, train, CheckpointRef, MetricsRecord, TrainOutcome, Trainer, METRICS_FILE,
};
pub use selection::{early_stop_check, select_checkpoint_offline};
pub use state::{StepPhase, TrainState};

use crate::baselines::{DeterministicPolicy, MixturePolicy};
use crate::critic::TwinCritic;
use crate::error::Result;
use crate::scalar::Scalar;

/// Constructs the agent for `cfg.algorithm`, drawing initial weights from `rng`
/// (actor first, then critics).
pub fn build_agent<T: Scalar>(
    cfg: &TrainConfig,
    state_dim: usize,
    action_dim: usize,
    rng: &mut dyn RngCore,
) -> Result<Box<dyn Agent<T>>> {
    cfg.validate()?;
    let bounds = cfg.bounds::<T>(action_dim);
    let critic = |rng: &mut dyn RngCore| TwinCritic::new(state_dim, action_dim, cfg.hidden, cfg.depth, rng);
    Ok(match cfg.algorithm {
        Algorithm::DiffusionQl | Algorithm::BcDiffusion => Box::new(TrainState::new(cfg, state_dim, bounds, rng)?),
        Algorithm::BcMle => Box::new(BcMleAgent::new(cfg, state_dim, bounds, rng)?),
        Algorithm::Mdn => Box::new(MdnAgent::new(cfg, state_dim, bounds, rng)?),
        Algorithm::Td3bc => {
            let actor = DeterministicPolicy::new(state_dim, cfg.hidden, cfg.depth, bounds, rng)?;
            Box::new(Td3BcAgent::from_actor(cfg, actor, critic(rng)?))
        }
        Algorithm::Td3bcGm => {
            let actor = MixturePolicy::new(state_dim, cfg.hidden, cfg.depth, cfg.mixtures, bounds, rng)?;
            Box::new(Td3BcAgent::from_actor(cfg, actor, critic(rng)?))
        }
    })
}
