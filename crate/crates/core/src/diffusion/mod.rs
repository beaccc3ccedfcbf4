//! Conditional diffusion policy: VP schedule, reverse sampling chain and the
//! noise-prediction behavior-cloning loss.

mod policy;
mod schedule;

pub use policy::{ChainNoise, ChainTape, DiffusionConfig, DiffusionPolicy, NoiseBatch};
pub use schedule::{build_vp_schedule, forward_noise, NoiseSchedule, DEFAULT_BETA_MAX, DEFAULT_BETA_MIN};
