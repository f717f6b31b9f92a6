//! Task pool builders for meta-training.

use super::TaskPools;
use crate::env::surrogate::{SurrogateEnv, SurrogateTask};
use crate::env::{EnvConfig, LocomotionEnv};
use crate::error::{config_err, Result};
use crate::morphology::{DesignParams, DesignSpace, NominalSpec};
use crate::ppo::rollout::EnvPool;
use crate::terrain::TerrainParams;

/// Locomotion pools; env `j` of a pool runs on `terrains[j % len]` scaled to
/// the scheduled difficulty.
#[derive(Debug, Clone)]
pub struct LocomotionTasks {
    pub env: EnvConfig,
    pub nominal: NominalSpec,
    pub space: DesignSpace,
    pub terrains: Vec<TerrainParams>,
    pub envs_per_task: usize,
}

impl LocomotionTasks {
    pub fn envs(&self, design: &DesignParams, difficulty: f64, count: usize) -> Result<Vec<LocomotionEnv>> {
        if self.terrains.is_empty() {
            return Err(config_err("at least one training terrain is required"));
        }
        (0..count)
            .map(|j| {
                let terrain = self.terrains[j % self.terrains.len()].at_difficulty(difficulty);
                LocomotionEnv::new(self.env.clone(), self.nominal.clone(), self.space.clone(), terrain, design)
            })
            .collect()
    }
}

impl TaskPools for LocomotionTasks {
    type Env = LocomotionEnv;

    fn pool(&self, design: &DesignParams, difficulty: f64, seed: u64, seed_path: &[u64]) -> Result<EnvPool<LocomotionEnv>> {
        Ok(EnvPool::new(self.envs(design, difficulty, self.envs_per_task)?, seed, seed_path))
    }
}

/// Pools of the closed-form surrogate task.
#[derive(Debug, Clone)]
pub struct SurrogateTasks {
    pub task: SurrogateTask,
    pub space: DesignSpace,
    pub envs_per_task: usize,
}

impl TaskPools for SurrogateTasks {
    type Env = SurrogateEnv;

    fn pool(&self, design: &DesignParams, _difficulty: f64, seed: u64, seed_path: &[u64]) -> Result<EnvPool<SurrogateEnv>> {
        let env = SurrogateEnv::new(self.task.clone(), self.space.clone(), design);
        Ok(EnvPool::new(vec![env; self.envs_per_task], seed, seed_path))
    }
}
