//! Command implementations. Every output is a pure function of the config,
//! the seed and the input checkpoint.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use morphopt_core::designopt::{self, mean_cost, CostMap, CostMetric, OptimizationReport, PoolFactory};
use morphopt_core::env::REWARD_TERM_NAMES;
use morphopt_core::maml::{inner_adapt, meta_train as run_meta_train, MetaRecord, MetaState};
use morphopt_core::morphology::DesignParams;
use morphopt_core::nn::{AdamState, Checkpoint, PolicyParams};
use morphopt_core::ppo::{run_episodes, ActionMode, Rollout};
use morphopt_core::seed::{self, stream};
use morphopt_core::Error;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

pub const EVAL_SCHEMA_VERSION: u32 = 1;
pub const LOG_FILE: &str = "meta_train.jsonl";
pub const FINAL_CHECKPOINT: &str = "meta_final.ckpt";
/// Seed-path label of `eval` runs.
const EVAL_COMMAND: u64 = 0x4556_434d;

/// Meta-training bookkeeping stored in the checkpoint manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaManifest {
    pub updates_done: usize,
    pub updates_total: usize,
    pub design_bounds: Vec<(f64, f64)>,
    pub mask_design: bool,
    pub difficulty: f64,
    pub seed: u64,
}

pub fn checkpoint_path(out: &Path, update: usize) -> PathBuf {
    out.join("checkpoints").join(format!("meta_{update:05}.ckpt"))
}

fn save_checkpoint(path: &Path, state: &MetaState, cfg: &ExperimentConfig) -> Result<()> {
    let manifest = MetaManifest {
        updates_done: state.updates_done,
        updates_total: cfg.meta.updates,
        design_bounds: cfg.space().bounds,
        mask_design: cfg.env.mask_design,
        difficulty: cfg.meta.difficulty(state.updates_done),
        seed: cfg.seed,
    };
    let ckpt = Checkpoint {
        params: state.params.clone(),
        optimizer: Some(state.optimizer.clone()),
        seed: cfg.seed,
        extra: serde_json::to_value(manifest)?,
    };
    ckpt.save(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Load a policy checkpoint and check that it fits the configured network.
pub fn load_policy(path: &Path, cfg: &ExperimentConfig) -> Result<Checkpoint> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    let want = cfg.layout();
    if ckpt.params.layout != want {
        return Err(Error::Checkpoint(format!(
            "{} holds a {:?} network but the config needs {:?}",
            path.display(),
            ckpt.params.layout,
            want
        ))
        .into());
    }
    Ok(ckpt)
}

#[derive(Debug, Clone)]
pub struct MetaTrainArgs {
    pub out: PathBuf,
    pub resume: Option<PathBuf>,
    /// Overrides `meta.updates`.
    pub updates: Option<usize>,
    /// Add wall-clock time to log records (makes the log non-reproducible).
    pub timing: bool,
}

/// Meta-train, writing `checkpoints/meta_NNNNN.ckpt` every
/// `meta.checkpoint_every` updates, `meta_final.ckpt` and a JSONL log.
pub fn meta_train(cfg: &ExperimentConfig, args: &MetaTrainArgs) -> Result<PathBuf> {
    let mut cfg = cfg.clone();
    if let Some(u) = args.updates {
        cfg.meta.updates = u;
    }
    cfg.validate()?;
    let tasks = cfg.train_tasks()?;
    fs::create_dir_all(args.out.join("checkpoints"))?;
    let log_path = args.out.join(LOG_FILE);

    let state = match &args.resume {
        Some(path) => {
            let ckpt = load_policy(path, &cfg)?;
            let manifest: MetaManifest = serde_json::from_value(ckpt.extra.clone())
                .map_err(|e| Error::Checkpoint(format!("{}: not a meta-training checkpoint ({e})", path.display())))?;
            let optimizer = ckpt
                .optimizer
                .ok_or_else(|| Error::Checkpoint(format!("{} has no optimizer state", path.display())))?;
            if manifest.seed != cfg.seed || manifest.design_bounds != cfg.space().bounds {
                return Err(Error::Checkpoint("checkpoint seed or design space differs from the config".into()).into());
            }
            truncate_log(&log_path, manifest.updates_done)?;
            MetaState { params: ckpt.params, optimizer, updates_done: manifest.updates_done }
        }
        None => {
            let params = PolicyParams::init(cfg.layout(), &mut seed::rng(cfg.seed, &[stream::INIT]));
            let n = params.values.len();
            let state = MetaState { params, optimizer: AdamState::new(n), updates_done: 0 };
            File::create(&log_path)?;
            save_checkpoint(&checkpoint_path(&args.out, 0), &state, &cfg)?;
            state
        }
    };

    let mut log = BufWriter::new(fs::OpenOptions::new().append(true).create(true).open(&log_path)?);
    let start = Instant::now();
    let every = cfg.meta.checkpoint_every;
    let final_state = run_meta_train(
        state,
        &cfg.space(),
        &tasks,
        &cfg.meta,
        &cfg.ppo,
        cfg.seed,
        |record: &MetaRecord, state: &MetaState| {
            let mut record = record.clone();
            if args.timing {
                record.update.wall_time_s = Some(start.elapsed().as_secs_f64());
            }
            serde_json::to_writer(&mut log, &record)?;
            log.write_all(b"\n")?;
            log.flush()?;
            if state.updates_done % every == 0 {
                save_checkpoint(&checkpoint_path(&args.out, state.updates_done), state, &cfg)
                    .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
            }
            Ok(())
        },
    )?;
    let path = args.out.join(FINAL_CHECKPOINT);
    save_checkpoint(&path, &final_state, &cfg)?;
    Ok(path)
}

/// Keep the first `updates_done` records of an existing log.
fn truncate_log(path: &Path, updates_done: usize) -> Result<()> {
    let kept: Vec<String> = match File::open(path) {
        Ok(f) => BufReader::new(f).lines().take(updates_done).collect::<std::io::Result<_>>()?,
        Err(_) => Vec::new(),
    };
    let mut out = BufWriter::new(File::create(path)?);
    for line in kept {
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct OptimizeArgs {
    pub out: PathBuf,
    pub policy: PathBuf,
    pub metric: Option<CostMetric>,
    pub terrain: Option<String>,
    pub generations: Option<usize>,
}

pub fn report_stem(metric: CostMetric, terrain: &str) -> String {
    format!("optimize_{}_{terrain}", metric.name())
}

/// CMA-ES design search; writes `<stem>.json` and `<stem>_generations.csv`.
pub fn optimize(cfg: &ExperimentConfig, args: &OptimizeArgs) -> Result<(PathBuf, OptimizationReport)> {
    let mut cfg = cfg.clone();
    if let Some(g) = args.generations {
        cfg.optimize.generations = g;
    }
    if let Some(t) = &args.terrain {
        cfg.optimize.terrain = t.clone();
    }
    let metric = args.metric.unwrap_or(cfg.optimize.metric);
    cfg.validate()?;
    let policy = load_policy(&args.policy, &cfg)?;
    let factory = cfg.eval_tasks(&cfg.optimize.terrain)?;
    let report = designopt::optimize_design(
        &policy.params,
        &factory,
        &cfg.space(),
        &cfg.nominal_design(),
        &cfg.optimize.protocol(metric),
        &cfg.ppo,
        &cfg.optimize.search(),
        cfg.seed,
    )?;
    fs::create_dir_all(&args.out)?;
    let stem = report_stem(metric, &cfg.optimize.terrain);
    let json = args.out.join(format!("{stem}.json"));
    write_json(&json, &report)?;
    report.write_generations_csv(File::create(args.out.join(format!("{stem}_generations.csv")))?)?;
    Ok((json, report))
}

#[derive(Debug, Clone)]
pub struct CostMapArgs {
    pub out: PathBuf,
    pub policy: PathBuf,
    pub metric: Option<CostMetric>,
    pub terrain: Option<String>,
    pub grid: Option<usize>,
}

/// Cost map over link scales; writes `costmap_<metric>_<terrain>.csv` (long
/// form) and `..._matrix.csv`.
pub fn cost_map(cfg: &ExperimentConfig, args: &CostMapArgs) -> Result<(PathBuf, CostMap)> {
    let mut cfg = cfg.clone();
    if let Some(g) = args.grid {
        cfg.cost_map.grid = g;
    }
    if let Some(t) = &args.terrain {
        cfg.optimize.terrain = t.clone();
    }
    let metric = args.metric.unwrap_or(cfg.optimize.metric);
    cfg.validate()?;
    let policy = load_policy(&args.policy, &cfg)?;
    let factory = cfg.eval_tasks(&cfg.optimize.terrain)?;
    let map = designopt::design_cost_map(
        cfg.cost_map.grid,
        &policy.params,
        &factory,
        &cfg.space(),
        &cfg.nominal_design(),
        &cfg.optimize.protocol(metric),
        &cfg.ppo,
        cfg.seed,
    )?;
    fs::create_dir_all(&args.out)?;
    let stem = format!("costmap_{}_{}", metric.name(), cfg.optimize.terrain);
    let path = args.out.join(format!("{stem}.csv"));
    map.write_csv(BufWriter::new(File::create(&path)?))?;
    map.write_matrix_csv(BufWriter::new(File::create(args.out.join(format!("{stem}_matrix.csv")))?))?;
    Ok((path, map))
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub out: PathBuf,
    pub policy: PathBuf,
    pub design: Vec<f64>,
    pub adapt: Option<usize>,
    pub episodes: Option<usize>,
    pub terrain: Option<String>,
    pub trajectory: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub velocity_tracking: Option<f64>,
    pub weighted_torque: Option<f64>,
    pub weighted_power: Option<f64>,
    pub mcot: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub schema_version: u32,
    pub design: Vec<f64>,
    pub terrain: String,
    pub adapt_steps: usize,
    pub degraded_adaptation: bool,
    pub episodes: usize,
    pub steps: usize,
    /// No transitions were collected; every statistic below is absent.
    pub zero_samples: bool,
    pub mean_reward: Option<f64>,
    pub mean_return: Option<f64>,
    pub mean_length: Option<f64>,
    pub fall_rate: Option<f64>,
    pub diverged: usize,
    /// Unweighted per-step means of the reward terms.
    pub terms: BTreeMap<String, f64>,
    /// Mean per-step costs; MCOT is absent when the robot barely moved.
    pub costs: CostSummary,
}

/// Adapt the policy to one design (`--adapt U`; 0 = raw meta-policy) and
/// roll out one full episode per evaluation env with mean actions.
pub fn eval(cfg: &ExperimentConfig, args: &EvalArgs) -> Result<(PathBuf, EvalMetrics)> {
    let mut cfg = cfg.clone();
    if let Some(t) = &args.terrain {
        cfg.optimize.terrain = t.clone();
    }
    cfg.validate()?;
    let design = parse_design(&args.design, &cfg)?;
    let policy = load_policy(&args.policy, &cfg)?;
    let factory = cfg.eval_tasks(&cfg.optimize.terrain)?;
    let adapt_steps = args.adapt.unwrap_or(cfg.eval.adapt_steps);
    let episodes = args.episodes.unwrap_or(cfg.eval.episodes);

    let mut adapt_pool = factory.build(&design, cfg.eval.adapt_envs, cfg.seed, &[EVAL_COMMAND, stream::ADAPT])?;
    let adapted =
        inner_adapt(&policy.params, &mut adapt_pool, cfg.optimize.rollout_length, cfg.eval.inner_stepsize, adapt_steps, &cfg.ppo);
    let mut pool = factory.build(&design, episodes, cfg.seed, &[EVAL_COMMAND, stream::EVAL])?;
    let (trajectories, stats) = run_episodes(&adapted.params, &mut pool, 1, ActionMode::Mean);

    let rollout = Rollout { trajectories, episode_returns: Vec::new(), episode_lengths: Vec::new() };
    let diags: Vec<_> = rollout.transitions().filter(|t| !t.diverged).map(|t| t.diagnostics).collect();
    let (mass, g) = (factory.total_mass(&design), factory.gravity());
    let cost = |m: CostMetric| mean_cost(m, &diags, mass, g).ok();
    let zero = stats.steps == 0;
    let metrics = EvalMetrics {
        schema_version: EVAL_SCHEMA_VERSION,
        design: design.to_vec(),
        terrain: cfg.optimize.terrain.clone(),
        adapt_steps,
        degraded_adaptation: adapted.degraded,
        episodes: stats.episodes,
        steps: stats.steps,
        zero_samples: zero,
        mean_reward: (!zero).then_some(stats.mean_reward),
        mean_return: (!zero).then_some(stats.mean_return),
        mean_length: (!zero).then_some(stats.mean_length),
        fall_rate: (!zero).then_some(stats.fall_rate),
        diverged: stats.diverged,
        terms: if zero { BTreeMap::new() } else { rollout.term_means().into_iter().map(|(k, v)| (k.to_string(), v)).collect() },
        costs: CostSummary {
            velocity_tracking: cost(CostMetric::VelocityTracking),
            weighted_torque: cost(CostMetric::WeightedTorque),
            weighted_power: cost(CostMetric::WeightedPower),
            mcot: cost(CostMetric::Mcot),
        },
    };
    fs::create_dir_all(&args.out)?;
    let tag = design.to_vec().iter().map(|v| format!("{v}")).collect::<Vec<_>>().join("_");
    let path = args.out.join(format!("eval_{tag}_u{adapt_steps}.json"));
    write_json(&path, &metrics)?;
    if let Some(tp) = &args.trajectory {
        write_trajectories(tp, &rollout)?;
    }
    Ok((path, metrics))
}

fn parse_design(x: &[f64], cfg: &ExperimentConfig) -> Result<DesignParams> {
    let space = cfg.space();
    let full: Vec<f64> = match (x.len(), space.dim()) {
        (2, 4) => {
            vec![x[0], x[1], cfg.nominal.hip_gear, cfg.nominal.knee_gear]
        }
        _ => x.to_vec(),
    };
    if full.len() != space.dim() {
        return Err(Error::Config(format!("--design needs {} values, got {}", space.dim(), x.len())).into());
    }
    for (v, (lo, hi)) in full.iter().zip(&space.bounds) {
        if !(lo..=hi).contains(&v) {
            return Err(Error::Config(format!("design value {v} outside [{lo}, {hi}]")).into());
        }
    }
    Ok(DesignParams::from_slice(&full)?)
}

/// Per-step CSV of evaluation episodes.
fn write_trajectories(path: &Path, rollout: &Rollout) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let mut header: Vec<String> = ["episode", "step", "reward"].iter().map(|s| s.to_string()).collect();
    header.extend(REWARD_TERM_NAMES.iter().map(|s| s.to_string()));
    header.extend(["e_v", "e_omega", "torque_sq", "positive_power", "speed", "terminal", "truncated"].map(String::from));
    header.extend((0..6).map(|i| format!("action_{i}")));
    w.write_record(&header)?;
    for (e, traj) in rollout.trajectories.iter().enumerate() {
        for (t, tr) in traj.iter().enumerate() {
            let d = &tr.diagnostics;
            let mut row = vec![e.to_string(), t.to_string(), tr.reward.to_string()];
            row.extend(tr.terms.as_array().iter().map(f64::to_string));
            row.extend([d.e_v, d.e_omega, d.torque_sq, d.positive_power, d.speed].iter().map(f64::to_string));
            row.extend([tr.terminal.to_string(), tr.truncated.to_string()]);
            row.extend(tr.action.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}
