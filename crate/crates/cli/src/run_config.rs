use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use dql_core::bandit::{BanditSpec, Layout};
use dql_core::trainer::TrainConfig;

/// Where training data comes from: a generated bandit or a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub layout: Option<Layout>,
    pub data: Option<PathBuf>,
    pub m: usize,
    pub data_seed: u64,
    pub reward_means: Option<Vec<f64>>,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            layout: None,
            data: None,
            m: 10_000,
            data_seed: 0,
            reward_means: None,
        }
    }
}

impl TaskConfig {
    pub fn validate(&self) -> Result<()> {
        match (&self.layout, &self.data) {
            (Some(_), Some(_)) => bail!("invalid config field `task`: give either a layout or a data file, not both"),
            (None, None) => bail!("invalid config field `task`: a layout or a data file is required"),
            _ => Ok(()),
        }
    }

    pub fn bandit(&self) -> Result<Option<BanditSpec>> {
        let Some(layout) = self.layout else { return Ok(None) };
        Ok(Some(bandit_spec(layout, self.m, self.reward_means.clone())?))
    }

    pub fn label(&self) -> String {
        match (&self.layout, &self.data) {
            (Some(l), _) => l.to_string(),
            (_, Some(p)) => p
                .file_stem()
                .map_or("data".into(), |s| s.to_string_lossy().into_owned()),
            _ => "task".into(),
        }
    }
}

pub fn bandit_spec(layout: Layout, m: usize, reward_means: Option<Vec<f64>>) -> Result<BanditSpec> {
    let mut spec = BanditSpec::for_layout(layout)?;
    spec.m = m;
    if let Some(r) = reward_means {
        spec.reward_means = r;
    }
    spec.validate()?;
    Ok(spec)
}

/// Everything a `train` or `ablate-n` invocation needs; this is also the
/// file echoed into each output directory.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskConfig,
    pub train: TrainConfig,
    #[serde(skip_serializing)]
    pub out_dir: Option<PathBuf>,
}

pub const ECHO_FILE: &str = "config.toml";

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}
