pub mod bandit;
pub mod baselines;
pub mod bounds;
pub mod critic;
pub mod dataset;
pub mod diffusion;
pub mod error;
pub mod experiment;
pub mod policy;
pub mod scalar;
pub mod tensornet;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type DiffusionPolicyF64 = diffusion::DiffusionPolicy<f64>;
pub type DiffusionPolicyF32 = diffusion::DiffusionPolicy<f32>;
pub type TwinCriticF64 = critic::TwinCritic<f64>;
pub type TwinCriticF32 = critic::TwinCritic<f32>;
pub type OfflineDatasetF64 = dataset::OfflineDataset<f64>;
pub type OfflineDatasetF32 = dataset::OfflineDataset<f32>;
pub type TrainStateF64 = trainer::TrainState<f64>;
pub type TrainStateF32 = trainer::TrainState<f32>;
pub type TrainerF64 = trainer::Trainer<f64>;
pub type TrainerF32 = trainer::Trainer<f32>;
