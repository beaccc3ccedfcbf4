use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bounds::ActionBounds;
use crate::critic::{Backup, QHead};
use crate::diffusion::DiffusionConfig;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Training algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// Diffusion policy with Q-guidance and twin critics.
    #[default]
    DiffusionQl,
    /// Diffusion policy trained on the denoising loss only.
    BcDiffusion,
    /// Unimodal Gaussian maximum likelihood.
    BcMle,
    /// Gaussian mixture maximum likelihood.
    Mdn,
    /// Deterministic actor with an L2 behavior-cloning term.
    Td3bc,
    /// Mixture actor with a likelihood behavior-cloning term.
    Td3bcGm,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::DiffusionQl,
        Algorithm::BcDiffusion,
        Algorithm::BcMle,
        Algorithm::Mdn,
        Algorithm::Td3bc,
        Algorithm::Td3bcGm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::DiffusionQl => "diffusion-ql",
            Algorithm::BcDiffusion => "bc-diffusion",
            Algorithm::BcMle => "bc-mle",
            Algorithm::Mdn => "mdn",
            Algorithm::Td3bc => "td3bc",
            Algorithm::Td3bcGm => "td3bc-gm",
        }
    }

    /// Whether the algorithm trains critics.
    pub fn uses_critic(self) -> bool {
        matches!(self, Algorithm::DiffusionQl | Algorithm::Td3bc | Algorithm::Td3bcGm)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::config("algorithm", format!("unknown algorithm '{s}'")))
    }
}

/// Hyperparameters for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub algorithm: Algorithm,
    /// Diffusion steps `N`.
    pub n_steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    /// Q-guidance weight; also the Q weight of the TD3+BC variants.
    pub eta: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    /// Polyak coefficient: `target <- rho * target + (1 - rho) * online`.
    pub rho: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub max_q: bool,
    pub max_q_samples: usize,
    /// Epochs between metrics records and checkpoints.
    pub eval_interval: usize,
    pub hidden: usize,
    pub depth: usize,
    pub embed_dim: usize,
    pub q_head: QHead,
    /// Mixture components for the mixture-based policies.
    pub mixtures: usize,
    /// Critic steps per actor step for the TD3+BC variants.
    pub policy_delay: usize,
    /// Anneal every learning rate to zero over the run with a cosine schedule.
    pub lr_decay: bool,
    /// Stop at the first strict increase of the logged `l_d`.
    pub early_stop: bool,
    /// Record real elapsed time in `wall_ms`; off keeps logs reproducible.
    pub log_wall_time: bool,
    pub action_low: f64,
    pub action_high: f64,
    /// Where checkpoints and `metrics.jsonl` go; nothing is written when unset.
    #[serde(skip_serializing)]
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            algorithm: Algorithm::DiffusionQl,
            n_steps: 5,
            beta_min: crate::diffusion::DEFAULT_BETA_MIN,
            beta_max: crate::diffusion::DEFAULT_BETA_MAX,
            eta: 1.0,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            gamma: 0.99,
            rho: 0.995,
            batch_size: 256,
            epochs: 50,
            steps_per_epoch: 1000,
            max_q: false,
            max_q_samples: 10,
            eval_interval: 1,
            hidden: 256,
            depth: 3,
            embed_dim: 16,
            q_head: QHead::First,
            mixtures: 3,
            policy_delay: 2,
            lr_decay: false,
            early_stop: false,
            log_wall_time: false,
            action_low: -1.0,
            action_high: 1.0,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config("config file", e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_steps", self.n_steps),
            ("batch_size", self.batch_size),
            ("steps_per_epoch", self.steps_per_epoch),
            ("max_q_samples", self.max_q_samples),
            ("eval_interval", self.eval_interval),
            ("hidden", self.hidden),
            ("depth", self.depth),
            ("mixtures", self.mixtures),
            ("policy_delay", self.policy_delay),
        ];
        for (field, v) in counts {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        for (field, v) in [("actor_lr", self.actor_lr), ("critic_lr", self.critic_lr)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(field, format!("{v} is not a positive rate")));
            }
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config("gamma", format!("{} is outside [0, 1)", self.gamma)));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::config("rho", format!("{} is outside (0, 1)", self.rho)));
        }
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return Err(Error::config(
                "eta",
                format!("{} must be finite and non-negative", self.eta),
            ));
        }
        if !(self.action_low.is_finite() && self.action_high.is_finite() && self.action_low < self.action_high) {
            return Err(Error::config("action_low", "bounds must satisfy low < high"));
        }
        crate::diffusion::build_vp_schedule::<f64>(self.n_steps, self.beta_min, self.beta_max)?;
        crate::tensornet::time_embed::<f64>(1, self.embed_dim)?;
        Ok(())
    }

    pub fn diffusion(&self) -> DiffusionConfig {
        DiffusionConfig {
            n_steps: self.n_steps,
            beta_min: self.beta_min,
            beta_max: self.beta_max,
            hidden: self.hidden,
            depth: self.depth,
            embed_dim: self.embed_dim,
        }
    }

    pub fn backup(&self) -> Backup {
        if self.max_q {
            Backup::MaxQ { k: self.max_q_samples }
        } else {
            Backup::Single
        }
    }

    pub fn bounds<T: Scalar>(&self, action_dim: usize) -> ActionBounds<T> {
        ActionBounds::new(
            vec![T::of(self.action_low); action_dim],
            vec![T::of(self.action_high); action_dim],
        )
        .expect("validated bounds")
    }
}
