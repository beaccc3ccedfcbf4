use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::agent::Agent;
use super::build_agent;
use super::config::{Algorithm, TrainConfig};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// First line of every checkpoint file.
pub const CHECKPOINT_MAGIC: &str = "DQL-CKPT-v1";

/// One parameter array, tagged with the group it belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub group: String,
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

/// Position of a ChaCha8 generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSnapshot {
    /// 32-byte key as lowercase hex.
    pub seed: String,
    pub stream: u64,
    /// 128-bit word position as a decimal string.
    pub word_pos: String,
}

impl RngSnapshot {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let bad = |what: &str| Error::Checkpoint(format!("malformed rng {what}"));
        if self.seed.len() != 64 {
            return Err(bad("seed"));
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad("seed"))?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse::<u128>().map_err(|_| bad("word position"))?);
        Ok(rng)
    }
}

/// Full training state: every parameter group, optimizer moments and
/// counters, the RNG position and the config that built it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub scalar: String,
    pub algorithm: Algorithm,
    pub epoch: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    pub config: TrainConfig,
    pub rng: RngSnapshot,
    pub counters: BTreeMap<String, u64>,
    pub arrays: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn capture<T: Scalar>(
        agent: &dyn Agent<T>,
        config: &TrainConfig,
        epoch: usize,
        state_dim: usize,
        rng: &ChaCha8Rng,
    ) -> Self {
        let mut arrays = Vec::new();
        for (group, set) in agent.groups() {
            for p in set.iter() {
                let (r, c) = p.value.dim();
                arrays.push(NamedArray {
                    group: group.to_string(),
                    name: p.name.clone(),
                    shape: [r, c],
                    data: p.value.iter().map(|v| v.as_f64()).collect(),
                });
            }
        }
        Self {
            scalar: T::NAME.to_string(),
            algorithm: agent.algorithm(),
            epoch,
            state_dim,
            action_dim: agent.policy().action_dim(),
            config: config.clone(),
            rng: RngSnapshot::capture(rng),
            counters: agent.counters().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            arrays,
        }
    }

    pub fn to_text(&self) -> String {
        let body = serde_json::to_string(self).expect("checkpoint serializes");
        format!("{CHECKPOINT_MAGIC}\n{body}\n")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let (head, body) = text.split_once('\n').unwrap_or((text, ""));
        if head != CHECKPOINT_MAGIC {
            if head.starts_with("DQL-CKPT-") {
                return Err(Error::VersionMismatch {
                    expected: CHECKPOINT_MAGIC.to_string(),
                    found: head.to_string(),
                });
            }
            return Err(Error::Checkpoint("missing checkpoint header".into()));
        }
        let ckpt: Self = serde_json::from_str(body).map_err(|e| Error::Checkpoint(e.to_string()))?;
        ckpt.config.validate()?;
        Ok(ckpt)
    }

    /// Writes to a sibling temporary file and renames it into place, so an
    /// existing checkpoint at `path` is never left half-written.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = Path::new(&tmp);
        let write = || -> std::io::Result<()> {
            let mut f = std::fs::File::create(tmp)?;
            f.write_all(self.to_text().as_bytes())?;
            f.sync_all()?;
            std::fs::rename(tmp, path)
        };
        write().map_err(|e| {
            let _ = std::fs::remove_file(tmp);
            Error::io(path, e)
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Rebuilds the agent and RNG exactly as captured.
    pub fn restore<T: Scalar>(&self) -> Result<(Box<dyn Agent<T>>, ChaCha8Rng)> {
        if self.scalar != T::NAME {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} parameters, requested {}",
                self.scalar,
                T::NAME
            )));
        }
        let mut cfg = self.config.clone();
        cfg.algorithm = self.algorithm;
        let mut scratch = ChaCha8Rng::seed_from_u64(0);
        let mut agent = build_agent::<T>(&cfg, self.state_dim, self.action_dim, &mut scratch)?;
        let mut by_key: BTreeMap<(&str, &str), &NamedArray> = BTreeMap::new();
        for a in &self.arrays {
            by_key.insert((a.group.as_str(), a.name.as_str()), a);
        }
        let mut used = 0;
        for (group, set) in agent.groups_mut() {
            for p in set.iter_mut() {
                let a = by_key
                    .get(&(group, p.name.as_str()))
                    .ok_or_else(|| Error::Checkpoint(format!("missing array {group}/{}", p.name)))?;
                let (r, c) = p.value.dim();
                if a.shape != [r, c] || a.data.len() != r * c {
                    return Err(Error::Checkpoint(format!(
                        "array {group}/{} has shape {:?}, expected [{r}, {c}]",
                        p.name, a.shape
                    )));
                }
                for (dst, &src) in p.value.iter_mut().zip(&a.data) {
                    *dst = T::of(src);
                }
                used += 1;
            }
        }
        if used != self.arrays.len() {
            return Err(Error::Checkpoint("checkpoint has arrays the agent does not use".into()));
        }
        for (name, slot) in agent.counters_mut() {
            *slot = *self
                .counters
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing counter {name}")))?;
        }
        Ok((agent, self.rng.restore()?))
    }
}
