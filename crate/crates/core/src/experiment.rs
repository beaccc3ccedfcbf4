//! Sample-based evaluation of trained policies on bandit tasks and the
//! diffusion-step ablation sweep.

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bandit::{mode_coverage, true_expected_reward, BanditSpec};
use crate::dataset::OfflineDataset;
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::scalar::Scalar;
use crate::trainer::{train, TrainConfig};

/// Radius around the optimal center that counts as having converged to it.
pub const OPTIMAL_RADIUS: f64 = 0.15;

/// Summary of actions sampled at the bandit's constant state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub per_mode: Vec<f64>,
    pub coverage: f64,
    pub ood: f64,
    /// Fraction within [`OPTIMAL_RADIUS`] of the highest-reward center.
    pub optimal_fraction: f64,
    pub expected_reward: f64,
    pub best_mean: f64,
    pub action_mean: [f64; 2],
    /// Per-dimension population variance of the samples.
    pub action_var: [f64; 2],
}

/// Draws `samples` actions at state `0` and scores them against `spec`.
pub fn evaluate_bandit<T: Scalar>(
    policy: &dyn Policy<T>,
    spec: &BanditSpec,
    samples: usize,
    seed: u64,
) -> Result<(EvalReport, Array2<T>)> {
    if samples == 0 {
        return Err(Error::config("samples", "must be at least 1"));
    }
    let states = Array2::zeros((samples, policy.state_dim()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let actions = policy.sample_batch(states.view(), &mut rng)?;
    Ok((score_actions(&actions, spec)?, actions))
}

pub fn score_actions<T: Scalar>(actions: &Array2<T>, spec: &BanditSpec) -> Result<EvalReport> {
    let cov = mode_coverage(actions.view(), spec)?;
    let x = actions.mapv(|v| v.as_f64());
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let var = x.var_axis(Axis(0), 0.0);
    let c = spec.centers[spec.optimal_mode()];
    let near = x
        .rows()
        .into_iter()
        .filter(|r| (r[0] - c[0]).hypot(r[1] - c[1]) <= OPTIMAL_RADIUS)
        .count();
    Ok(EvalReport {
        samples: x.nrows(),
        coverage: cov.total(),
        ood: cov.ood,
        per_mode: cov.per_mode,
        optimal_fraction: near as f64 / x.nrows() as f64,
        expected_reward: true_expected_reward(actions.view(), spec)?,
        best_mean: spec.best_mean(),
        action_mean: [mean[0], mean[1]],
        action_var: [var[0], var[1]],
    })
}

/// `x,y` rows for external plotting.
pub fn scatter_csv<T: Scalar>(actions: &Array2<T>) -> String {
    let mut out = String::from("x,y\n");
    for r in actions.rows() {
        let cells: Vec<String> = r.iter().map(|v| format!("{:?}", v.as_f64())).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub n: usize,
    pub final_l_d: f64,
    pub report: EvalReport,
}

/// Trains one run per entry of `ns` (deduplicated, order kept) with otherwise
/// identical config, concurrently, and evaluates each final policy.
pub fn ablate_n<T: Scalar>(
    base: &TrainConfig,
    ns: &[usize],
    data: &OfflineDataset<T>,
    spec: &BanditSpec,
    samples: usize,
) -> Result<Vec<AblationRow>> {
    let mut unique = Vec::new();
    for &n in ns {
        if unique.contains(&n) {
            log::warn!("duplicate N = {n} ignored");
        } else {
            unique.push(n);
        }
    }
    if unique.is_empty() {
        return Err(Error::config("n", "at least one value required"));
    }
    let configs: Vec<TrainConfig> = unique
        .iter()
        .map(|&n| {
            let mut cfg = base.clone();
            cfg.n_steps = n;
            cfg.checkpoint_dir = base.checkpoint_dir.as_ref().map(|d| d.join(format!("n{n}")));
            cfg.validate().map(|_| cfg)
        })
        .collect::<Result<_>>()?;
    std::thread::scope(|scope| {
        let handles: Vec<_> = configs
            .iter()
            .map(|cfg| {
                scope.spawn(move || -> Result<AblationRow> {
                    let (trainer, outcome) = train(cfg, data)?;
                    let final_l_d = outcome.log.last().map_or(f64::NAN, |r| r.l_d);
                    let (report, _) = evaluate_bandit(trainer.agent.policy(), spec, samples, cfg.seed)?;
                    Ok(AblationRow {
                        n: cfg.n_steps,
                        final_l_d,
                        report,
                    })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("ablation worker panicked"))
            .collect()
    })
}

/// Fixed-width text table of an ablation.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut out = format!(
        "{:>5} {:>10} {:>9} {:>7} {:>9} {:>9}\n",
        "N", "final_l_d", "coverage", "ood", "optimal", "reward"
    );
    for r in rows {
        out.push_str(&format!(
            "{:>5} {:>10.5} {:>9.4} {:>7.4} {:>9.4} {:>9.4}\n",
            r.n, r.final_l_d, r.report.coverage, r.report.ood, r.report.optimal_fraction, r.report.expected_reward
        ));
    }
    out
}
