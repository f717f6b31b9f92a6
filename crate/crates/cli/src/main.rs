use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use morphopt_cli::commands::{self, CostMapArgs, EvalArgs, MetaTrainArgs, OptimizeArgs};
use morphopt_cli::{exit_code, ExperimentConfig, OUTPUT_DIR_ENV};
use morphopt_core::designopt::CostMetric;

#[derive(Parser)]
#[command(name = "morphopt", version, about = "Meta-learned locomotion and design optimization for a planar quadruped")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment config (TOML). Without it the desk profile is used.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Output directory; beats $MORPHOPT_OUT and the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Meta-train the design-conditioned policy.
    MetaTrain {
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        updates: Option<usize>,
        /// Record wall-clock time in the log.
        #[arg(long)]
        timing: bool,
    },
    /// Search the design space with CMA-ES.
    Optimize {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, value_parser = parse_metric)]
        metric: Option<CostMetric>,
        #[arg(long)]
        terrain: Option<String>,
        #[arg(long)]
        generations: Option<usize>,
    },
    /// Evaluate the cost over a grid of link scales.
    CostMap {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, value_parser = parse_metric)]
        metric: Option<CostMetric>,
        #[arg(long)]
        terrain: Option<String>,
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Evaluate the (adapted) policy on one design.
    Eval {
        #[arg(long)]
        policy: PathBuf,
        /// thigh_scale shank_scale [hip_gear knee_gear]
        #[arg(long, num_args = 2..=4, required = true, allow_negative_numbers = true)]
        design: Vec<f64>,
        #[arg(long)]
        adapt: Option<usize>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        terrain: Option<String>,
        /// Also write per-step trajectories to this CSV.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
}

fn parse_metric(s: &str) -> Result<CostMetric, String> {
    CostMetric::parse(s).ok_or_else(|| format!("unknown metric `{s}` (velocity, torque, power, mcot)"))
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.global.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::desk(),
    };
    if let Some(s) = cli.global.seed {
        cfg.seed = s;
    }
    let out = cli
        .global
        .out
        .clone()
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| cfg.output_dir.clone());
    if cli.global.workers == 0 {
        return Err(morphopt_core::Error::Config("--workers must be >= 1".into()).into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.global.workers)
        .build_global()
        .context("starting the worker pool")?;

    match cli.command {
        Command::MetaTrain { resume, updates, timing } => {
            let path = commands::meta_train(&cfg, &MetaTrainArgs { out, resume, updates, timing })?;
            println!("checkpoint {}", path.display());
        }
        Command::Optimize { policy, metric, terrain, generations } => {
            let (path, r) = commands::optimize(&cfg, &OptimizeArgs { out, policy, metric, terrain, generations })?;
            println!(
                "best {:?} cost {:.6} nominal {:.6} improvement {:.2}% -> {}",
                r.best_design,
                r.best_reevaluated_cost,
                r.nominal_cost,
                r.improvement_pct,
                path.display()
            );
        }
        Command::CostMap { policy, metric, terrain, grid } => {
            let (path, map) = commands::cost_map(&cfg, &CostMapArgs { out, policy, metric, terrain, grid })?;
            match map.argmin {
                Some((i, j)) => println!(
                    "argmin thigh_scale {} shank_scale {} cost {} ({} failed cells) -> {}",
                    map.thigh[i],
                    map.shank[j],
                    map.cost(i, j),
                    map.failed.len(),
                    path.display()
                ),
                None => println!("argmin none: every cell failed -> {}", path.display()),
            }
        }
        Command::Eval { policy, design, adapt, episodes, terrain, trajectory } => {
            let (path, m) = commands::eval(&cfg, &EvalArgs { out, policy, design, adapt, episodes, terrain, trajectory })?;
            match m.mean_reward {
                Some(r) => println!("mean reward {r:.6} over {} episodes -> {}", m.episodes, path.display()),
                None => println!("no samples -> {}", path.display()),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
