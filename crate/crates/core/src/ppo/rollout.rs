//! Environment pools, rollout collection and episode evaluation.
//!
//! Every pool slot owns its environment and random stream, so slots can be
//! stepped on any number of threads and the result depends only on seeds.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::reward::REWARD_TERM_NAMES;
use crate::env::{Diagnostics, Environment, RewardTerms};
use crate::nn::policy::{forward_with, PolicyCache};
use crate::nn::{PolicyParams, PpoSamples};
use crate::seed::{self, Rng};

use super::gae;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    /// Sampled (unclipped) action.
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    /// Value of the successor: 0 after a terminal step, `V(s')` otherwise
    /// (including at truncation).
    pub next_value: f64,
    /// The episode ended with this step.
    pub end: bool,
    pub terminal: bool,
    pub truncated: bool,
    pub diverged: bool,
    pub terms: RewardTerms,
    pub diagnostics: Diagnostics,
}

/// One env's contiguous run of transitions.
pub type Trajectory = Vec<Transition>;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Rollout {
    pub trajectories: Vec<Trajectory>,
    /// Returns and lengths of episodes that finished during collection.
    pub episode_returns: Vec<f64>,
    pub episode_lengths: Vec<usize>,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.trajectories.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.trajectories.iter().flatten()
    }

    pub fn mean_reward(&self) -> f64 {
        let n = self.len();
        if n == 0 {
            return 0.0;
        }
        self.transitions().map(|t| t.reward).sum::<f64>() / n as f64
    }

    pub fn diverged(&self) -> usize {
        self.transitions().filter(|t| t.diverged).count()
    }

    /// Mean of each unweighted reward term, keyed by term name.
    pub fn term_means(&self) -> Vec<(&'static str, f64)> {
        let n = self.len().max(1) as f64;
        let mut sums = [0.0; 9];
        for t in self.transitions() {
            for (s, v) in sums.iter_mut().zip(t.terms.as_array()) {
                *s += v;
            }
        }
        REWARD_TERM_NAMES.iter().zip(sums).map(|(k, s)| (*k, s / n)).collect()
    }

    /// GAE over every trajectory, flattened into training rows in env order.
    pub fn to_samples(&self, gamma: f64, lambda: f64) -> PpoSamples {
        let mut out = PpoSamples::default();
        for traj in &self.trajectories {
            let rewards: Vec<f64> = traj.iter().map(|t| t.reward).collect();
            let values: Vec<f64> = traj.iter().map(|t| t.value).collect();
            let next: Vec<f64> = traj.iter().map(|t| t.next_value).collect();
            let ends: Vec<bool> = traj.iter().map(|t| t.end).collect();
            let (adv, ret) = gae(&rewards, &values, &next, &ends, gamma, lambda);
            for (i, t) in traj.iter().enumerate() {
                out.push(&t.obs, &t.action, t.log_prob, adv[i], ret[i]);
            }
        }
        out
    }
}

/// How actions are chosen from the policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    Sample,
    Mean,
}

#[derive(Debug, Clone)]
pub struct EnvSlot<E> {
    pub env: E,
    rng: Rng,
    obs: Option<Vec<f64>>,
    episode_return: f64,
    episode_length: usize,
}

impl<E: Environment> EnvSlot<E> {
    /// Discard the running episode; the next step starts a fresh one.
    pub fn force_reset(&mut self) {
        self.obs = None;
        self.episode_return = 0.0;
        self.episode_length = 0;
    }

    fn current_obs(&mut self) -> Vec<f64> {
        if self.obs.is_none() {
            self.obs = Some(self.env.reset(&mut self.rng));
        }
        self.obs.clone().expect("observation present")
    }
}

/// Independent environments, each with its own random stream.
#[derive(Debug, Clone)]
pub struct EnvPool<E> {
    pub slots: Vec<EnvSlot<E>>,
}

impl<E: Environment> EnvPool<E> {
    /// Slot `i` draws from the stream `seed / path / i`.
    pub fn new(envs: Vec<E>, seed: u64, path: &[u64]) -> Self {
        let slots = envs
            .into_iter()
            .enumerate()
            .map(|(i, env)| {
                let mut p = path.to_vec();
                p.push(i as u64);
                EnvSlot { env, rng: seed::rng(seed, &p), obs: None, episode_return: 0.0, episode_length: 0 }
            })
            .collect();
        Self { slots }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn reset_all(&mut self) {
        self.slots.iter_mut().for_each(EnvSlot::force_reset);
    }
}

/// Step every slot `steps_per_env` times with the policy, continuing
/// episodes across calls.
pub fn collect_rollouts<E: Environment>(
    params: &PolicyParams,
    pool: &mut EnvPool<E>,
    steps_per_env: usize,
    mode: ActionMode,
) -> Rollout {
    let per_slot: Vec<(Trajectory, Vec<(f64, usize)>)> =
        pool.slots.par_iter_mut().map(|slot| run_slot(params, slot, steps_per_env, mode)).collect();
    let mut out = Rollout::default();
    for (traj, episodes) in per_slot {
        out.trajectories.push(traj);
        for (r, l) in episodes {
            out.episode_returns.push(r);
            out.episode_lengths.push(l);
        }
    }
    out
}

fn value_of(params: &PolicyParams, obs: &[f64], cache: &mut PolicyCache) -> f64 {
    forward_with(&params.layout, &params.values, obs, 1, cache).value[0]
}

fn run_slot<E: Environment>(
    params: &PolicyParams,
    slot: &mut EnvSlot<E>,
    steps: usize,
    mode: ActionMode,
) -> (Trajectory, Vec<(f64, usize)>) {
    let mut cache = PolicyCache::default();
    let mut traj = Vec::with_capacity(steps);
    let mut finished = Vec::new();
    for _ in 0..steps {
        let obs = slot.current_obs();
        let out = forward_with(&params.layout, &params.values, &obs, 1, &mut cache);
        let value = out.value[0];
        let (action, log_prob) = match mode {
            ActionMode::Sample => params.sample(&out.mean, &mut slot.rng),
            ActionMode::Mean => {
                let lp = crate::nn::gaussian_log_prob(&out.mean, &out.log_std, &out.mean);
                (out.mean.clone(), lp)
            }
        };
        let step = slot.env.step(&action);
        slot.episode_return += step.reward;
        slot.episode_length += 1;
        let end = step.done();
        let next_value = if step.terminal { 0.0 } else { value_of(params, &step.obs, &mut cache) };
        traj.push(Transition {
            obs,
            action,
            log_prob,
            reward: step.reward,
            value,
            next_value,
            end,
            terminal: step.terminal,
            truncated: step.truncated,
            diverged: step.diverged,
            terms: step.terms,
            diagnostics: step.diagnostics,
        });
        if end {
            finished.push((slot.episode_return, slot.episode_length));
            slot.force_reset();
        } else {
            slot.obs = Some(step.obs);
        }
    }
    (traj, finished)
}

/// Summary of complete evaluation episodes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub episodes: usize,
    pub steps: usize,
    /// Mean undiscounted episode return.
    pub mean_return: f64,
    /// Mean per-step reward over all steps.
    pub mean_reward: f64,
    pub mean_length: f64,
    /// Fraction of episodes that ended in a fall (or divergence).
    pub fall_rate: f64,
    pub diverged: usize,
}

/// Run `episodes_per_env` complete episodes in every slot from fresh resets.
/// Returns the per-episode trajectories (slot-major) and their summary.
pub fn run_episodes<E: Environment>(
    params: &PolicyParams,
    pool: &mut EnvPool<E>,
    episodes_per_env: usize,
    mode: ActionMode,
) -> (Vec<Trajectory>, EpisodeStats) {
    let per_slot: Vec<Vec<Trajectory>> = pool
        .slots
        .par_iter_mut()
        .map(|slot| {
            let mut episodes = Vec::with_capacity(episodes_per_env);
            for _ in 0..episodes_per_env {
                slot.force_reset();
                let mut ep = Vec::new();
                loop {
                    let (mut part, _) = run_slot(params, slot, 1, mode);
                    let t = part.pop().expect("one step");
                    let end = t.end;
                    ep.push(t);
                    if end {
                        break;
                    }
                }
                episodes.push(ep);
            }
            episodes
        })
        .collect();
    let episodes: Vec<Trajectory> = per_slot.into_iter().flatten().collect();
    let stats = episode_stats(&episodes);
    (episodes, stats)
}

pub fn episode_stats(episodes: &[Trajectory]) -> EpisodeStats {
    let n = episodes.len();
    if n == 0 {
        return EpisodeStats::default();
    }
    let steps: usize = episodes.iter().map(Vec::len).sum();
    let total: f64 = episodes.iter().flatten().map(|t| t.reward).sum();
    let falls = episodes.iter().filter(|e| e.last().is_some_and(|t| t.terminal)).count();
    EpisodeStats {
        episodes: n,
        steps,
        mean_return: total / n as f64,
        mean_reward: if steps > 0 { total / steps as f64 } else { 0.0 },
        mean_length: steps as f64 / n as f64,
        fall_rate: falls as f64 / n as f64,
        diverged: episodes.iter().flatten().filter(|t| t.diverged).count(),
    }
}
