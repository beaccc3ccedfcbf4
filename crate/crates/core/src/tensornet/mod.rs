//! Dense networks with hand-derived backward passes, Adam, Polyak averaging
//! and a finite-difference gradient checker.

mod activation;
mod adam;
pub mod gradcheck;
mod mlp;
mod params;

pub use activation::{mish, mish_grad, time_embed};
pub use adam::{AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use mlp::{mlp_forward, Activation, MlpSpec, MlpTape};
pub use params::{polyak_update, Param, ParamSet};
