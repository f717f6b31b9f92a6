//! Collect → update loops for a fixed design (specialized policy) and for
//! uniformly resampled designs (naive multi-task policy).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::rollout::{collect_rollouts, ActionMode, EnvPool, Rollout};
use super::{ppo_update, PpoHyper, UpdateStats};
use crate::env::Environment;
use crate::error::Result;
use crate::morphology::{sample_design, DesignSpace};
use crate::nn::{AdamState, PolicyParams};
use crate::seed::{self, stream};

/// One line of the JSONL training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub update: usize,
    pub transitions: usize,
    pub mean_reward: f64,
    /// Mean return of episodes that finished during this update's
    /// collection; absent if none finished.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_episode_return: Option<f64>,
    pub episodes: usize,
    pub terms: BTreeMap<String, f64>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub diverged: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<f64>,
    /// Present only when timing output is requested, since it makes logs
    /// differ between runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

impl UpdateRecord {
    pub fn from_rollout(update: usize, rollout: &Rollout, stats: &UpdateStats) -> Self {
        let episodes = rollout.episode_returns.len();
        Self {
            update,
            transitions: rollout.len(),
            mean_reward: rollout.mean_reward(),
            mean_episode_return: (episodes > 0).then(|| rollout.episode_returns.iter().sum::<f64>() / episodes as f64),
            episodes,
            terms: rollout.term_means().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            mean_ratio: stats.mean_ratio,
            clip_fraction: stats.clip_fraction,
            approx_kl: stats.approx_kl,
            diverged: rollout.diverged(),
            difficulty: None,
            wall_time_s: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub optimizer: AdamState,
    pub log: Vec<UpdateRecord>,
}

/// PPO on whatever designs the pool's environments carry.
pub fn train_fixed_design<E: Environment>(
    params: PolicyParams,
    pool: &mut EnvPool<E>,
    hyper: &PpoHyper,
    updates: usize,
    steps_per_env: usize,
    seed: u64,
) -> Result<TrainOutcome> {
    train_loop(params, pool, hyper, updates, steps_per_env, seed, None)
}

/// PPO where every env gets a freshly sampled design (and a fresh episode)
/// before each update.
pub fn train_multi_design<E: Environment>(
    params: PolicyParams,
    pool: &mut EnvPool<E>,
    space: &DesignSpace,
    hyper: &PpoHyper,
    updates: usize,
    steps_per_env: usize,
    seed: u64,
) -> Result<TrainOutcome> {
    train_loop(params, pool, hyper, updates, steps_per_env, seed, Some(space))
}

fn train_loop<E: Environment>(
    mut params: PolicyParams,
    pool: &mut EnvPool<E>,
    hyper: &PpoHyper,
    updates: usize,
    steps_per_env: usize,
    seed: u64,
    resample: Option<&DesignSpace>,
) -> Result<TrainOutcome> {
    hyper.validate()?;
    let mut opt = AdamState::new(params.values.len());
    let mut shuffle = seed::rng(seed, &[stream::SHUFFLE]);
    let mut designs = seed::rng(seed, &[stream::TASKS]);
    let mut log = Vec::with_capacity(updates);
    for update in 0..updates {
        if let Some(space) = resample {
            for slot in &mut pool.slots {
                let d = sample_design(&mut designs, space)?;
                slot.env.set_design(&d);
                slot.force_reset();
            }
        }
        let rollout = collect_rollouts(&params, pool, steps_per_env, ActionMode::Sample);
        let samples = rollout.to_samples(hyper.gamma, hyper.lambda);
        let stats = ppo_update(&mut params, &mut opt, &samples, hyper, &mut shuffle)?;
        log.push(UpdateRecord::from_rollout(update, &rollout, &stats));
    }
    Ok(TrainOutcome { params, optimizer: opt, log })
}
