//! Monte-Carlo fitness of a design under the adapted meta-policy.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cmaes::PopulationFitness;
use super::cost::{mean_cost, CostMetric};
use crate::env::surrogate::SurrogateEnv;
use crate::env::{Diagnostics, Environment, LocomotionEnv};
use crate::error::{config_err, Result};
use crate::maml::{inner_adapt, LocomotionTasks, SurrogateTasks};
use crate::morphology::{build_robot, DesignParams};
use crate::nn::PolicyParams;
use crate::ppo::rollout::{collect_rollouts, ActionMode, EnvPool};
use crate::ppo::PpoHyper;
use crate::seed::stream;

/// Penalty cost used before any valid evaluation has been seen.
pub const FALLBACK_PENALTY: f64 = 1e6;

/// Builds evaluation pools for a design.
pub trait PoolFactory: Sync {
    type Env: Environment;
    fn build(&self, design: &DesignParams, count: usize, seed: u64, seed_path: &[u64]) -> Result<EnvPool<Self::Env>>;
    fn total_mass(&self, design: &DesignParams) -> f64;
    fn gravity(&self) -> f64;
}

impl PoolFactory for LocomotionTasks {
    type Env = LocomotionEnv;

    /// Uses the configured terrains as they are (no difficulty schedule).
    fn build(&self, design: &DesignParams, count: usize, seed: u64, seed_path: &[u64]) -> Result<EnvPool<LocomotionEnv>> {
        if self.terrains.is_empty() {
            return Err(config_err("at least one evaluation terrain is required"));
        }
        let envs = (0..count)
            .map(|j| {
                let terrain = self.terrains[j % self.terrains.len()].clone();
                LocomotionEnv::new(self.env.clone(), self.nominal.clone(), self.space.clone(), terrain, design)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EnvPool::new(envs, seed, seed_path))
    }

    fn total_mass(&self, design: &DesignParams) -> f64 {
        build_robot(design, &self.nominal).total_mass()
    }

    fn gravity(&self) -> f64 {
        self.env.sim.gravity
    }
}

impl PoolFactory for SurrogateTasks {
    type Env = SurrogateEnv;

    fn build(&self, design: &DesignParams, count: usize, seed: u64, seed_path: &[u64]) -> Result<EnvPool<SurrogateEnv>> {
        let env = SurrogateEnv::new(self.task.clone(), self.space.clone(), design);
        Ok(EnvPool::new(vec![env; count], seed, seed_path))
    }

    fn total_mass(&self, _: &DesignParams) -> f64 {
        1.0
    }

    fn gravity(&self) -> f64 {
        9.81
    }
}

/// How a candidate design is scored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalProtocol {
    pub metric: CostMetric,
    /// Adaptation steps U.
    pub adapt_steps: usize,
    /// Rollout length per env for each adaptation step T.
    pub rollout_length: usize,
    pub inner_stepsize: f64,
    pub adapt_envs: usize,
    pub eval_envs: usize,
    /// Transitions collected per evaluation env with the adapted policy.
    pub eval_transitions: usize,
}

impl EvalProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.adapt_envs == 0 || self.eval_envs == 0 || self.eval_transitions == 0 || self.rollout_length == 0 {
            return Err(config_err("design evaluation needs >= 1 env, transition and rollout step"));
        }
        if !(self.inner_stepsize.is_finite() && self.inner_stepsize >= 0.0) {
            return Err(config_err("inner stepsize must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessEstimate {
    /// Mean per-transition cost; `NaN` when `valid` is false.
    pub cost: f64,
    pub valid: bool,
    pub degraded_adaptation: bool,
    pub transitions: usize,
    pub diverged: usize,
    pub mean_reward: f64,
    #[serde(skip)]
    pub diagnostics: Vec<Diagnostics>,
}

/// Adapt a copy of `meta` to `design` (U steps of length T on the adaptation
/// pool), then roll out the adapted policy's mean actions for
/// `eval_transitions` steps in every evaluation env and average the cost.
/// Random streams: adaptation under `seed / ADAPT / path`, evaluation under
/// `seed / EVAL / path`.
pub fn estimate_fitness<F: PoolFactory>(
    design: &DesignParams,
    meta: &PolicyParams,
    protocol: &EvalProtocol,
    ppo: &PpoHyper,
    factory: &F,
    seed: u64,
    path: &[u64],
) -> Result<FitnessEstimate> {
    protocol.validate()?;
    let with = |label: u64| [&[label][..], path].concat();
    let mut adapt_pool = factory.build(design, protocol.adapt_envs, seed, &with(stream::ADAPT))?;
    let adapted = inner_adapt(meta, &mut adapt_pool, protocol.rollout_length, protocol.inner_stepsize, protocol.adapt_steps, ppo);
    let mut eval_pool = factory.build(design, protocol.eval_envs, seed, &with(stream::EVAL))?;
    let rollout = collect_rollouts(&adapted.params, &mut eval_pool, protocol.eval_transitions, ActionMode::Mean);
    let diagnostics: Vec<Diagnostics> = rollout.transitions().filter(|t| !t.diverged).map(|t| t.diagnostics).collect();
    let diverged = rollout.diverged();
    let cost = if adapted.degraded || diagnostics.is_empty() {
        None
    } else {
        mean_cost(protocol.metric, &diagnostics, factory.total_mass(design), factory.gravity()).ok()
    };
    Ok(FitnessEstimate {
        cost: cost.unwrap_or(f64::NAN),
        valid: cost.is_some_and(f64::is_finite),
        degraded_adaptation: adapted.degraded,
        transitions: rollout.len(),
        diverged,
        mean_reward: rollout.mean_reward(),
        diagnostics,
    })
}

/// Replaces failed evaluations by 10× the worst valid cost seen so far.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PenaltyTracker {
    pub worst: Option<f64>,
}

impl PenaltyTracker {
    /// Process estimates in order; returns the costs to hand to the optimizer
    /// and which ones were penalized.
    pub fn apply(&mut self, estimates: &[FitnessEstimate]) -> (Vec<f64>, Vec<bool>) {
        for e in estimates.iter().filter(|e| e.valid) {
            self.worst = Some(self.worst.map_or(e.cost, |w| w.max(e.cost)));
        }
        let penalty = self.worst.map_or(FALLBACK_PENALTY, |w| 10.0 * w.abs().max(1e-12));
        estimates.iter().map(|e| if e.valid { (e.cost, false) } else { (penalty, true) }).unzip()
    }
}

/// CMA-ES fitness oracle backed by [`estimate_fitness`]. With common random
/// numbers every candidate of a generation shares the generation's seeds.
pub struct DesignFitness<'a, F: PoolFactory> {
    pub meta: &'a PolicyParams,
    pub protocol: EvalProtocol,
    pub ppo: PpoHyper,
    pub factory: &'a F,
    /// Maps an optimizer vector to a design.
    pub to_design: &'a (dyn Fn(&[f64]) -> Result<DesignParams> + Sync),
    pub seed: u64,
    pub common_random_numbers: bool,
    pub penalties: PenaltyTracker,
    /// Every estimate, generation-major.
    pub history: Vec<Vec<FitnessEstimate>>,
}

impl<F: PoolFactory> PopulationFitness for DesignFitness<'_, F> {
    fn evaluate(&mut self, generation: usize, designs: &[Vec<f64>]) -> (Vec<f64>, Vec<bool>) {
        let estimates: Vec<FitnessEstimate> = designs
            .par_iter()
            .enumerate()
            .map(|(i, x)| {
                let path: Vec<u64> = if self.common_random_numbers {
                    vec![stream::CMA, generation as u64]
                } else {
                    vec![stream::CMA, generation as u64, i as u64]
                };
                (self.to_design)(x)
                    .and_then(|d| estimate_fitness(&d, self.meta, &self.protocol, &self.ppo, self.factory, self.seed, &path))
                    .unwrap_or_else(|_| FitnessEstimate {
                        cost: f64::NAN,
                        valid: false,
                        degraded_adaptation: false,
                        transitions: 0,
                        diverged: 0,
                        mean_reward: 0.0,
                        diagnostics: Vec::new(),
                    })
            })
            .collect();
        let out = self.penalties.apply(&estimates);
        self.history.push(estimates);
        out
    }
}
