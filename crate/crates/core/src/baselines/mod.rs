//! Comparison policies: unimodal Gaussian BC, mixture density networks and
//! the deterministic TD3+BC actor.

mod deterministic;
mod gaussian;
mod mixture;

pub use deterministic::{DeterministicPolicy, Td3BcLoss};
pub use gaussian::{GaussianGrads, GaussianPolicy, LOG_STD_MAX, LOG_STD_MIN};
pub use mixture::{MixtureNoise, MixtureParams, MixturePolicy};

#[cfg(test)]
mod tests;
