use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::agent::{Agent, StepMetrics};
use super::build_agent;
use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::selection::early_stop_check;
use crate::dataset::OfflineDataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const METRICS_FILE: &str = "metrics.jsonl";

/// One line of the metrics log; losses are means over the steps since the
/// previous record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub step: u64,
    pub l_d: f64,
    pub l_q: f64,
    pub critic_loss: f64,
    pub mean_abs_q: f64,
    pub wall_ms: u64,
}

impl MetricsRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }

    pub fn parse_log(text: &str) -> Result<Vec<Self>> {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointRef {
    pub epoch: usize,
    pub step: u64,
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainOutcome {
    pub log: Vec<MetricsRecord>,
    pub checkpoints: Vec<CheckpointRef>,
    pub stopped_early: bool,
}

pub fn checkpoint_file_name(epoch: usize) -> String {
    format!("epoch-{epoch:04}.ckpt")
}

#[derive(Default)]
struct Accumulator {
    n: u64,
    sum: StepMetrics,
}

impl Accumulator {
    fn add(&mut self, m: &StepMetrics) {
        self.n += 1;
        self.sum.l_d += m.l_d;
        self.sum.l_q += m.l_q;
        self.sum.critic_loss += m.critic_loss;
        self.sum.mean_abs_q += m.mean_abs_q;
    }

    fn mean(&self) -> StepMetrics {
        let n = self.n.max(1) as f64;
        StepMetrics {
            l_d: self.sum.l_d / n,
            l_q: self.sum.l_q / n,
            policy_loss: (self.sum.l_d + self.sum.l_q) / n,
            critic_loss: self.sum.critic_loss / n,
            mean_abs_q: self.sum.mean_abs_q / n,
        }
    }
}

/// An agent, its RNG and the loop position.
pub struct Trainer<T: Scalar> {
    pub config: TrainConfig,
    pub agent: Box<dyn Agent<T>>,
    pub rng: ChaCha8Rng,
    /// Last completed epoch.
    pub epoch: usize,
    state_dim: usize,
}

impl<T: Scalar> Trainer<T> {
    /// Seeds the RNG from `config.seed` and initializes the agent from it.
    pub fn new(config: &TrainConfig, state_dim: usize, action_dim: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let agent = build_agent(config, state_dim, action_dim, &mut rng)?;
        Ok(Self {
            config: config.clone(),
            agent,
            rng,
            epoch: 0,
            state_dim,
        })
    }

    /// Resumes exactly where `ckpt` was taken. Output settings such as the
    /// checkpoint directory come from `config` when given.
    pub fn from_checkpoint(ckpt: &Checkpoint, config: Option<&TrainConfig>) -> Result<Self> {
        let (agent, rng) = ckpt.restore::<T>()?;
        let mut cfg = ckpt.config.clone();
        if let Some(c) = config {
            cfg.checkpoint_dir = c.checkpoint_dir.clone();
            cfg.epochs = c.epochs;
            cfg.early_stop = c.early_stop;
            cfg.log_wall_time = c.log_wall_time;
        }
        Ok(Self {
            config: cfg,
            agent,
            rng,
            epoch: ckpt.epoch,
            state_dim: ckpt.state_dim,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(self.agent.as_ref(), &self.config, self.epoch, self.state_dim, &self.rng)
    }

    fn save_checkpoint(&self, dir: Option<&Path>) -> Result<CheckpointRef> {
        let path = match dir {
            Some(d) => {
                let p = d.join(checkpoint_file_name(self.epoch));
                self.checkpoint().save(&p)?;
                Some(p)
            }
            None => None,
        };
        Ok(CheckpointRef {
            epoch: self.epoch,
            step: self.agent.counters().first().map_or(0, |c| c.1),
            path,
        })
    }

    fn open_metrics(&self, dir: Option<&Path>) -> Result<Option<BufWriter<File>>> {
        let Some(d) = dir else { return Ok(None) };
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        let path = d.join(METRICS_FILE);
        let file = if self.epoch == 0 {
            File::create(&path)
        } else {
            OpenOptions::new().create(true).append(true).open(&path)
        };
        Ok(Some(BufWriter::new(file.map_err(|e| Error::io(&path, e))?)))
    }

    /// Runs epochs `epoch + 1 ..= config.epochs`. Each epoch takes
    /// `steps_per_epoch` steps on uniformly drawn mini-batches; every
    /// `eval_interval` epochs (and after the last) a metrics record and a
    /// checkpoint are written. A fresh run also checkpoints epoch 0.
    pub fn run(&mut self, data: &OfflineDataset<T>) -> Result<TrainOutcome> {
        if data.is_empty() {
            return Err(Error::EmptyBatch("training dataset"));
        }
        let (sd, ad) = (data.data.state_dim(), data.data.action_dim());
        if sd != self.state_dim || ad != self.agent.policy().action_dim() {
            return Err(Error::DimensionMismatch {
                what: "dataset columns",
                expected: self.state_dim + self.agent.policy().action_dim(),
                got: sd + ad,
            });
        }
        let dir = self.config.checkpoint_dir.clone();
        let dir = dir.as_deref();
        let mut metrics_out = self.open_metrics(dir)?;
        let mut out = TrainOutcome::default();
        if self.epoch == 0 {
            out.checkpoints.push(self.save_checkpoint(dir)?);
        }
        let total_steps = self.config.epochs * self.config.steps_per_epoch;
        let mut acc = Accumulator::default();
        let mut clock = Instant::now();
        while self.epoch < self.config.epochs {
            for k in 0..self.config.steps_per_epoch {
                if self.config.lr_decay {
                    let scale = T::of(cosine_lr_scale(
                        self.epoch * self.config.steps_per_epoch + k,
                        total_steps,
                    ));
                    for opt in self.agent.optimizers_mut() {
                        opt.lr_scale = scale;
                    }
                }
                let batch = data.sample_batch(&mut self.rng, self.config.batch_size);
                let m = self.agent.train_step(&batch, &mut self.rng)?;
                acc.add(&m);
            }
            self.epoch += 1;
            if self.epoch % self.config.eval_interval != 0 && self.epoch != self.config.epochs {
                continue;
            }
            let mean = acc.mean();
            let record = MetricsRecord {
                epoch: self.epoch,
                step: self.agent.counters().first().map_or(0, |c| c.1),
                l_d: mean.l_d,
                l_q: mean.l_q,
                critic_loss: mean.critic_loss,
                mean_abs_q: mean.mean_abs_q,
                wall_ms: if self.config.log_wall_time {
                    clock.elapsed().as_millis() as u64
                } else {
                    0
                },
            };
            acc = Accumulator::default();
            clock = Instant::now();
            info!(
                "epoch {} step {} l_d {:.5} l_q {:.5} critic {:.5}",
                record.epoch, record.step, record.l_d, record.l_q, record.critic_loss
            );
            if let Some(w) = metrics_out.as_mut() {
                let path = dir.expect("writer implies dir").join(METRICS_FILE);
                writeln!(w, "{}", record.to_json_line())
                    .and_then(|_| w.flush())
                    .map_err(|e| Error::io(&path, e))?;
            }
            out.log.push(record);
            out.checkpoints.push(self.save_checkpoint(dir)?);
            let history: Vec<f64> = out.log.iter().map(|r| r.l_d).collect();
            if self.config.early_stop && early_stop_check(&history) {
                info!("l_d increased at epoch {}; stopping", self.epoch);
                out.stopped_early = true;
                break;
            }
        }
        Ok(out)
    }
}

/// Cosine annealing from 1 at step 0 towards 0 at `total` steps.
pub fn cosine_lr_scale(step: usize, total: usize) -> f64 {
    0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total.max(1) as f64).cos())
}

/// Builds a trainer from `config` and runs it on `data`.
pub fn train<T: Scalar>(config: &TrainConfig, data: &OfflineDataset<T>) -> Result<(Trainer<T>, TrainOutcome)> {
    let mut trainer = Trainer::new(config, data.data.state_dim(), data.data.action_dim())?;
    let outcome = trainer.run(data)?;
    Ok((trainer, outcome))
}
