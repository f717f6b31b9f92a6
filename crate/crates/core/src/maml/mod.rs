//! First-order MAML over designs: inner adaptation by plain gradient steps on
//! the PPO loss, outer update by Adam on the losses of the adapted policies.

pub mod tasks;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{config_err, Result};
use crate::morphology::{sample_design, DesignParams, DesignSpace};
use crate::nn::loss::Objective;
use crate::nn::{AdamState, PolicyParams, PpoLoss, PpoSamples};
use crate::ppo::rollout::{collect_rollouts, ActionMode, EnvPool, Rollout};
use crate::ppo::{normalize_advantages, ppo_update_groups, Group, PpoHyper, UpdateRecord, UpdateStats};
use crate::seed::{self, stream};

pub use tasks::{LocomotionTasks, SurrogateTasks};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaHyper {
    /// Outer updates N.
    pub updates: usize,
    /// Tasks per outer update M.
    pub meta_batch: usize,
    /// Rollout length per env K.
    pub rollout_length: usize,
    /// Inner (plain gradient) stepsize α.
    pub inner_stepsize: f64,
    /// Outer Adam stepsize β.
    pub outer_stepsize: f64,
    /// Inner steps during meta-training.
    pub inner_steps: usize,
    /// Envs per task.
    pub envs_per_task: usize,
    /// Fraction of the updates over which terrain difficulty ramps up.
    pub schedule_fraction: f64,
    pub max_difficulty: f64,
    pub checkpoint_every: usize,
}

impl Default for MetaHyper {
    fn default() -> Self {
        Self {
            updates: 300,
            meta_batch: 5,
            rollout_length: 50,
            inner_stepsize: 5e-4,
            outer_stepsize: 5e-4,
            inner_steps: 1,
            envs_per_task: 12,
            schedule_fraction: 0.6,
            max_difficulty: 1.0,
            checkpoint_every: 25,
        }
    }
}

impl MetaHyper {
    pub fn validate(&self) -> Result<()> {
        if self.meta_batch == 0 || self.rollout_length == 0 || self.envs_per_task == 0 {
            return Err(config_err("meta.meta_batch, meta.rollout_length and meta.envs_per_task must be >= 1"));
        }
        if !(self.inner_stepsize.is_finite() && self.inner_stepsize >= 0.0) {
            return Err(config_err("meta.inner_stepsize must be finite and >= 0"));
        }
        if !(self.outer_stepsize.is_finite() && self.outer_stepsize > 0.0) {
            return Err(config_err("meta.outer_stepsize must be > 0"));
        }
        if !(self.schedule_fraction > 0.0 && self.schedule_fraction <= 1.0) {
            return Err(config_err("meta.schedule_fraction must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.max_difficulty) {
            return Err(config_err("meta.max_difficulty must lie in [0, 1]"));
        }
        if self.checkpoint_every == 0 {
            return Err(config_err("meta.checkpoint_every must be >= 1"));
        }
        Ok(())
    }

    /// Terrain difficulty at outer update `update`: linear from 0 to the
    /// maximum over the first `schedule_fraction` of the run, then flat.
    pub fn difficulty(&self, update: usize) -> f64 {
        let ramp = self.schedule_fraction * self.updates as f64;
        if ramp <= 0.0 {
            return self.max_difficulty;
        }
        self.max_difficulty * (update as f64 / ramp).min(1.0)
    }
}

/// `θ ← θ − α·g`.
pub fn sgd_step(params: &mut [f64], grad: &[f64], stepsize: f64) {
    for (p, g) in params.iter_mut().zip(grad) {
        *p -= stepsize * g;
    }
}

/// Full-batch PPO loss on a fresh rollout (advantages normalized), as used
/// by the inner step.
pub fn inner_samples(rollout: &Rollout, hyper: &PpoHyper) -> PpoSamples {
    let mut s = rollout.to_samples(hyper.gamma, hyper.lambda);
    normalize_advantages(&mut s.advantages);
    s
}

#[derive(Debug, Clone)]
pub struct Adapted {
    pub params: PolicyParams,
    /// The rollout collected before each gradient step.
    pub rollouts: Vec<Rollout>,
    /// A non-finite inner loss stopped adaptation; `params` are the input.
    pub degraded: bool,
}

/// `steps` rounds of: collect `rollout_length` steps per env, then one plain
/// gradient step of size `stepsize` on the PPO loss. The input is never
/// modified.
pub fn inner_adapt<E: Environment>(
    params: &PolicyParams,
    pool: &mut EnvPool<E>,
    rollout_length: usize,
    stepsize: f64,
    steps: usize,
    hyper: &PpoHyper,
) -> Adapted {
    let mut adapted = params.clone();
    let mut rollouts = Vec::with_capacity(steps);
    for _ in 0..steps {
        let rollout = collect_rollouts(&adapted, pool, rollout_length, ActionMode::Sample);
        let samples = inner_samples(&rollout, hyper);
        rollouts.push(rollout);
        let loss = PpoLoss { layout: &adapted.layout, samples: &samples, coefs: hyper.coefs() };
        let (value, grad) = loss.value_and_grad(&adapted.values);
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Adapted { params: params.clone(), rollouts, degraded: true };
        }
        sgd_step(&mut adapted.values, &grad, stepsize);
        adapted.round_to_f32();
        adapted.clamp_log_std();
    }
    Adapted { params: adapted, rollouts, degraded: false }
}

/// Data collected for one task of an outer update.
#[derive(Debug, Clone)]
pub struct TaskData {
    pub samples: PpoSamples,
    /// Adapted minus meta parameters.
    pub offset: Vec<f64>,
}

/// First-order outer update: the PPO loss of each task's post-adaptation data
/// is differentiated at that task's adapted parameters (meta parameters plus
/// the task offset) and the summed gradient drives Adam on the meta
/// parameters with stepsize `hyper.stepsize` (β).
pub fn meta_update(
    params: &mut PolicyParams,
    opt: &mut AdamState,
    tasks: &[TaskData],
    hyper: &PpoHyper,
    rng: &mut seed::Rng,
) -> Result<UpdateStats> {
    let groups: Vec<Group<'_>> = tasks.iter().map(|t| Group { samples: &t.samples, offset: Some(&t.offset) }).collect();
    ppo_update_groups(params, opt, &groups, hyper, rng)
}

/// Where a meta-training run stands; enough to resume it exactly.
#[derive(Debug, Clone)]
pub struct MetaState {
    pub params: PolicyParams,
    pub optimizer: AdamState,
    /// Outer updates already applied.
    pub updates_done: usize,
}

/// One outer update's log line plus the adapted/unadapted comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaRecord {
    #[serde(flatten)]
    pub update: UpdateRecord,
    /// Mean per-step reward of the pre-adaptation rollouts.
    pub pre_adaptation_reward: f64,
    pub designs: Vec<Vec<f64>>,
    pub degraded_tasks: usize,
}

/// Builds the env pool for one task.
pub trait TaskPools: Sync {
    type Env: Environment;
    /// `seed_path` identifies the pool's random streams.
    fn pool(&self, design: &DesignParams, difficulty: f64, seed: u64, seed_path: &[u64]) -> Result<EnvPool<Self::Env>>;
}

/// Run outer updates `state.updates_done .. hyper.updates`. Every random
/// stream is keyed by the update index, so stopping and resuming from a
/// checkpointed state reproduces the uninterrupted run. `on_update` sees each
/// record and the state after it (for logging and checkpointing).
pub fn meta_train<P: TaskPools>(
    mut state: MetaState,
    space: &DesignSpace,
    pools: &P,
    hyper: &MetaHyper,
    ppo: &PpoHyper,
    seed: u64,
    mut on_update: impl FnMut(&MetaRecord, &MetaState) -> Result<()>,
) -> Result<MetaState> {
    hyper.validate()?;
    ppo.validate()?;
    space.validate()?;
    let outer = PpoHyper { stepsize: hyper.outer_stepsize, ..*ppo };
    while state.updates_done < hyper.updates {
        let u = state.updates_done as u64;
        let difficulty = hyper.difficulty(state.updates_done);
        let mut task_rng = seed::rng(seed, &[stream::TASKS, u]);
        let designs = (0..hyper.meta_batch).map(|_| sample_design(&mut task_rng, space)).collect::<Result<Vec<_>>>()?;

        let meta = &state.params;
        let per_task: Vec<Result<(Adapted, Rollout)>> = designs
            .par_iter()
            .enumerate()
            .map(|(i, d)| {
                let mut pool = pools.pool(d, difficulty, seed, &[stream::TRAIN, u, i as u64])?;
                let adapted =
                    inner_adapt(meta, &mut pool, hyper.rollout_length, hyper.inner_stepsize, hyper.inner_steps, ppo);
                let post = collect_rollouts(&adapted.params, &mut pool, hyper.rollout_length, ActionMode::Sample);
                Ok((adapted, post))
            })
            .collect();
        let per_task = per_task.into_iter().collect::<Result<Vec<_>>>()?;

        let tasks: Vec<TaskData> = per_task
            .iter()
            .map(|(a, post)| TaskData {
                samples: post.to_samples(ppo.gamma, ppo.lambda),
                offset: a.params.values.iter().zip(&meta.values).map(|(x, y)| x - y).collect(),
            })
            .collect();
        let mut shuffle = seed::rng(seed, &[stream::SHUFFLE, u]);
        let stats = meta_update(&mut state.params, &mut state.optimizer, &tasks, &outer, &mut shuffle)?;
        state.updates_done += 1;

        let merged = Rollout {
            trajectories: per_task.iter().flat_map(|(_, r)| r.trajectories.clone()).collect(),
            episode_returns: per_task.iter().flat_map(|(_, r)| r.episode_returns.clone()).collect(),
            episode_lengths: per_task.iter().flat_map(|(_, r)| r.episode_lengths.clone()).collect(),
        };
        let pre: Vec<f64> = per_task.iter().flat_map(|(a, _)| a.rollouts.first().map(Rollout::mean_reward)).collect();
        let mut update = UpdateRecord::from_rollout(u as usize, &merged, &stats);
        update.difficulty = Some(difficulty);
        let record = MetaRecord {
            update,
            pre_adaptation_reward: pre.iter().sum::<f64>() / pre.len().max(1) as f64,
            designs: designs.iter().map(DesignParams::to_vec).collect(),
            degraded_tasks: per_task.iter().filter(|(a, _)| a.degraded).count(),
        };
        on_update(&record, &state)?;
    }
    Ok(state)
}
