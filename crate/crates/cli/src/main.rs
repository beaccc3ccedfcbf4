mod run_config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::builder::PossibleValuesParser;
use clap::{Args, Parser, Subcommand};
use log::info;

use dql_core::bandit::{gen_dataset, Layout};
use dql_core::critic::QHead;
use dql_core::dataset::OfflineDataset;
use dql_core::experiment::{ablate_n, ablation_table, evaluate_bandit, scatter_csv};
use dql_core::trainer::{
    checkpoint_file_name, select_checkpoint_offline, train, Algorithm, Checkpoint, MetricsRecord, Trainer, METRICS_FILE,
};

use run_config::{bandit_spec, RunConfig, ECHO_FILE};

const OUT_ENV: &str = "DQL_OUT_DIR";

#[derive(Parser)]
#[command(name = "dql", version, about = "Diffusion Q-learning on synthetic bandits")]
struct Cli {
    /// Root for default output locations.
    #[arg(long, global = true, env = OUT_ENV, default_value = "dql-out")]
    out_root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a bandit dataset file.
    GenData(GenDataArgs),
    /// Train one policy.
    Train(TrainArgs),
    /// Sample a checkpoint's policy and score it on a bandit.
    Eval(EvalArgs),
    /// Pick the checkpoint with the second-lowest logged l_d.
    Select(SelectArgs),
    /// Train one run per diffusion-step count and tabulate the results.
    AblateN(AblateArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    layout: Layout,
    #[arg(long, default_value_t = 10_000)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated per-mode reward means.
    #[arg(long, value_delimiter = ',')]
    reward_means: Option<Vec<f64>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn algorithm_parser() -> PossibleValuesParser {
    PossibleValuesParser::new(Algorithm::ALL.map(Algorithm::name))
}

/// Training flags; every one overrides the matching `--config` entry.
#[derive(Args, Default)]
struct TrainFlags {
    /// TOML file with `[task]` and `[train]` sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    layout: Option<Layout>,
    /// Dataset file instead of a generated bandit.
    #[arg(long, conflicts_with = "layout")]
    data: Option<PathBuf>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    reward_means: Option<Vec<f64>>,
    #[arg(long, value_parser = algorithm_parser())]
    algo: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Diffusion steps.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    actor_lr: Option<f64>,
    #[arg(long)]
    critic_lr: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    steps_per_epoch: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    max_q: Option<bool>,
    #[arg(long)]
    max_q_samples: Option<usize>,
    #[arg(long)]
    eval_interval: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long, value_parser = ["first", "min", "mean"])]
    q_head: Option<String>,
    #[arg(long)]
    mixtures: Option<usize>,
    #[arg(long)]
    policy_delay: Option<usize>,
    /// Cosine learning-rate annealing over the run.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    lr_decay: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    early_stop: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    log_wall_time: Option<bool>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    /// Seed for the evaluation draws.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Bandit to score against; defaults to the task echoed next to the checkpoint.
    #[arg(long)]
    layout: Option<Layout>,
    #[arg(long, value_delimiter = ',')]
    reward_means: Option<Vec<f64>>,
    /// Output directory; defaults to the checkpoint's directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SelectArgs {
    /// Run directory holding checkpoints and the metrics log.
    #[arg(long)]
    run: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    /// Comma-separated diffusion step counts.
    #[arg(long, value_delimiter = ',', required = true)]
    ns: Vec<usize>,
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    #[command(flatten)]
    flags: TrainFlags,
}

impl TrainFlags {
    fn resolve(&self) -> Result<RunConfig> {
        let mut rc = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let task = &mut rc.task;
        if let Some(l) = self.layout {
            task.layout = Some(l);
            task.data = None;
        }
        if let Some(d) = &self.data {
            task.data = Some(d.clone());
            task.layout = None;
        }
        set(&mut task.m, self.m);
        set(&mut task.data_seed, self.data_seed);
        if let Some(r) = &self.reward_means {
            task.reward_means = Some(r.clone());
        }
        let t = &mut rc.train;
        if let Some(a) = &self.algo {
            t.algorithm = a.parse()?;
        }
        set(&mut t.seed, self.seed);
        set(&mut t.n_steps, self.n);
        set(&mut t.eta, self.eta);
        set(&mut t.actor_lr, self.actor_lr);
        set(&mut t.critic_lr, self.critic_lr);
        set(&mut t.gamma, self.gamma);
        set(&mut t.rho, self.rho);
        set(&mut t.batch_size, self.batch_size);
        set(&mut t.epochs, self.epochs);
        set(&mut t.steps_per_epoch, self.steps_per_epoch);
        set(&mut t.max_q, self.max_q);
        set(&mut t.max_q_samples, self.max_q_samples);
        set(&mut t.eval_interval, self.eval_interval);
        set(&mut t.hidden, self.hidden);
        set(&mut t.depth, self.depth);
        set(&mut t.embed_dim, self.embed_dim);
        if let Some(h) = &self.q_head {
            t.q_head = match h.as_str() {
                "min" => QHead::Min,
                "mean" => QHead::Mean,
                _ => QHead::First,
            };
        }
        set(&mut t.mixtures, self.mixtures);
        set(&mut t.policy_delay, self.policy_delay);
        set(&mut t.lr_decay, self.lr_decay);
        set(&mut t.early_stop, self.early_stop);
        set(&mut t.log_wall_time, self.log_wall_time);
        if let Some(o) = &self.out {
            rc.out_dir = Some(o.clone());
        }
        rc.validate()?;
        Ok(rc)
    }
}

fn set<T: Copy>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn load_data(rc: &RunConfig) -> Result<OfflineDataset<f64>> {
    match (&rc.task.data, rc.task.bandit()?) {
        (Some(p), _) => OfflineDataset::import(p).with_context(|| format!("loading dataset {}", p.display())),
        (None, Some(spec)) => Ok(gen_dataset(&spec, rc.task.data_seed)?),
        (None, None) => bail!("no task configured"),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn cmd_gen_data(root: &Path, a: &GenDataArgs) -> Result<()> {
    let spec = bandit_spec(a.layout, a.m, a.reward_means.clone())?;
    let data = gen_dataset::<f64>(&spec, a.seed)?;
    let path = a
        .out
        .clone()
        .unwrap_or_else(|| root.join("data").join(format!("{}-m{}-s{}.csv", a.layout, a.m, a.seed)));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    data.export(&path)?;
    let per_mode = spec.m / spec.modes();
    println!("wrote {} rows to {}", data.len(), path.display());
    for (k, c) in spec.centers.iter().enumerate() {
        let mean_r: f64 = data.data.rewards.iter().skip(k * per_mode).take(per_mode).sum::<f64>() / per_mode as f64;
        println!(
            "mode {k} center ({:+.2}, {:+.2}): {per_mode} rows, reward mean {:.4} (spec {:.2})",
            c[0], c[1], mean_r, spec.reward_means[k]
        );
    }
    Ok(())
}

fn default_run_dir(root: &Path, rc: &RunConfig) -> PathBuf {
    let t = &rc.train;
    root.join("runs").join(format!(
        "{}-{}-n{}-s{}",
        t.algorithm,
        rc.task.label(),
        t.n_steps,
        t.seed
    ))
}

fn cmd_train(root: &Path, a: &TrainArgs) -> Result<()> {
    let mut rc = a.flags.resolve()?;
    let data = load_data(&rc)?;
    let dir = rc.out_dir.clone().unwrap_or_else(|| default_run_dir(root, &rc));
    create_dir(&dir)?;
    write_file(&dir.join(ECHO_FILE), &rc.to_toml())?;
    rc.train.checkpoint_dir = Some(dir.clone());
    let (_, outcome) = train(&rc.train, &data)?;
    if let Some(last) = outcome.log.last() {
        println!(
            "epoch {} step {}: l_d {:.5} l_q {:.5} critic {:.5}",
            last.epoch, last.step, last.l_d, last.l_q, last.critic_loss
        );
    }
    if outcome.stopped_early {
        println!("stopped early: l_d increased");
    }
    println!("run directory: {}", dir.display());
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    if a.samples == 0 {
        bail!("--samples must be at least 1");
    }
    let ckpt = Checkpoint::load(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let dir = a.checkpoint.parent().unwrap_or(Path::new(".")).to_path_buf();
    let spec = match a.layout {
        Some(l) => bandit_spec(l, 10_000, a.reward_means.clone())?,
        None => {
            let echo = dir.join(ECHO_FILE);
            let rc = RunConfig::load(&echo)
                .map_err(|e| anyhow!("{e:#}; pass --layout to choose the bandit to score against"))?;
            let mut spec = rc
                .task
                .bandit()?
                .ok_or_else(|| anyhow!("run was not trained on a bandit; pass --layout"))?;
            if let Some(r) = &a.reward_means {
                spec.reward_means = r.clone();
            }
            spec
        }
    };
    let trainer = Trainer::<f64>::from_checkpoint(&ckpt, None)?;
    let (report, actions) = evaluate_bandit(trainer.agent.policy(), &spec, a.samples, a.seed)?;
    let out = a.out.clone().unwrap_or(dir);
    create_dir(&out)?;
    let stem = a
        .checkpoint
        .file_stem()
        .map_or("checkpoint".into(), |s| s.to_string_lossy().into_owned());
    let json = serde_json::to_string_pretty(&report)?;
    write_file(&out.join(format!("{stem}.eval.json")), &format!("{json}\n"))?;
    write_file(&out.join(format!("{stem}.scatter.csv")), &scatter_csv(&actions))?;
    println!("{json}");
    Ok(())
}

fn cmd_select(a: &SelectArgs) -> Result<()> {
    let log_path = a.run.join(METRICS_FILE);
    let text =
        std::fs::read_to_string(&log_path).with_context(|| format!("no metrics log at {}", log_path.display()))?;
    let log = MetricsRecord::parse_log(&text)?;
    if log.is_empty() {
        bail!("metrics log {} has no records", log_path.display());
    }
    let l_d: Vec<f64> = log.iter().map(|r| r.l_d).collect();
    let idx = select_checkpoint_offline(&l_d)?;
    let chosen = a.run.join(checkpoint_file_name(log[idx].epoch));
    if !chosen.exists() {
        bail!("selected checkpoint {} is missing", chosen.display());
    }
    let dest = a.run.join("selected.ckpt");
    std::fs::copy(&chosen, &dest).with_context(|| format!("copying to {}", dest.display()))?;
    info!("epoch {} has l_d {:.6}", log[idx].epoch, l_d[idx]);
    println!("{}", chosen.display());
    Ok(())
}

fn cmd_ablate(root: &Path, a: &AblateArgs) -> Result<()> {
    if a.samples == 0 {
        bail!("--samples must be at least 1");
    }
    let rc = a.flags.resolve()?;
    let spec = rc
        .task
        .bandit()?
        .ok_or_else(|| anyhow!("ablate-n scores runs on a bandit; give --layout"))?;
    let data = load_data(&rc)?;
    let dir = rc.out_dir.clone().unwrap_or_else(|| {
        root.join("ablate")
            .join(format!("{}-{}-s{}", rc.train.algorithm, rc.task.label(), rc.train.seed))
    });
    create_dir(&dir)?;
    write_file(&dir.join(ECHO_FILE), &rc.to_toml())?;
    let mut base = rc.train.clone();
    base.checkpoint_dir = Some(dir.clone());
    let rows = ablate_n(&base, &a.ns, &data, &spec, a.samples)?;
    let table = ablation_table(&rows);
    write_file(&dir.join("ablation.txt"), &table)?;
    write_file(
        &dir.join("ablation.json"),
        &format!("{}\n", serde_json::to_string_pretty(&rows)?),
    )?;
    print!("{table}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData(a) => cmd_gen_data(&cli.out_root, a),
        Command::Train(a) => cmd_train(&cli.out_root, a),
        Command::Eval(a) => cmd_eval(a),
        Command::Select(a) => cmd_select(a),
        Command::AblateN(a) => cmd_ablate(&cli.out_root, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
