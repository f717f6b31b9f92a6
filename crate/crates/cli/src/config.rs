//! Experiment configuration: one TOML file per run, layered over a named
//! profile (`desk` or `paper`).

use std::path::{Path, PathBuf};

use morphopt_core::designopt::{CostMetric, EvalProtocol, SearchSettings};
use morphopt_core::env::{obs_dim, EnvConfig, ACT_DIM};
use morphopt_core::maml::{LocomotionTasks, MetaHyper};
use morphopt_core::morphology::{DesignParams, DesignSpace, NominalSpec, GEAR_BOUNDS};
use morphopt_core::nn::PolicyLayout;
use morphopt_core::ppo::PpoHyper;
use morphopt_core::terrain::TerrainParams;
use morphopt_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Desk,
    Paper,
}

/// A terrain given by preset name (`flat`, `mid_hills`, …) or in full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TerrainSpec {
    Preset(String),
    Custom(TerrainParams),
}

impl TerrainSpec {
    pub fn resolve(&self) -> Result<TerrainParams> {
        let t = match self {
            Self::Preset(name) => TerrainParams::preset(name)?,
            Self::Custom(t) => t.clone(),
        };
        t.validate()?;
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    /// Optimize gear ratios as well as link scales (4-D design space).
    pub gears: bool,
}

impl DesignConfig {
    pub fn space(&self) -> DesignSpace {
        if self.gears { DesignSpace::with_gears() } else { DesignSpace::links_only() }
    }

    /// Unit link scales and, in 4-D, the nominal gear ratios.
    pub fn nominal(&self, spec: &NominalSpec) -> DesignParams {
        if self.gears {
            DesignParams::with_gears(1.0, 1.0, spec.hip_gear, spec.knee_gear)
        } else {
            DesignParams::links(1.0, 1.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerrainConfig {
    /// Cycled over the envs of each meta-training task.
    pub train: Vec<TerrainSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeConfig {
    pub metric: CostMetric,
    pub terrain: String,
    pub population: usize,
    pub generations: usize,
    pub initial_sigma: f64,
    pub penalty_weight: f64,
    pub common_random_numbers: bool,
    /// Adaptation steps U per candidate.
    pub adapt_steps: usize,
    /// Rollout length T per adaptation step.
    pub rollout_length: usize,
    pub inner_stepsize: f64,
    pub adapt_envs: usize,
    pub eval_envs: usize,
    /// Transitions per evaluation env.
    pub eval_transitions: usize,
}

impl OptimizeConfig {
    pub fn search(&self) -> SearchSettings {
        SearchSettings {
            population: self.population,
            generations: self.generations,
            initial_sigma: self.initial_sigma,
            penalty_weight: self.penalty_weight,
            common_random_numbers: self.common_random_numbers,
        }
    }

    pub fn protocol(&self, metric: CostMetric) -> EvalProtocol {
        EvalProtocol {
            metric,
            adapt_steps: self.adapt_steps,
            rollout_length: self.rollout_length,
            inner_stepsize: self.inner_stepsize,
            adapt_envs: self.adapt_envs,
            eval_envs: self.eval_envs,
            eval_transitions: self.eval_transitions,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostMapConfig {
    pub grid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub episodes: usize,
    pub adapt_steps: usize,
    /// Adaptation pool size and plain-gradient step for the `eval` command.
    pub adapt_envs: usize,
    pub inner_stepsize: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub design: DesignConfig,
    pub nominal: NominalSpec,
    pub terrain: TerrainConfig,
    pub env: EnvConfig,
    pub policy: PolicyConfig,
    pub ppo: PpoHyper,
    pub meta: MetaHyper,
    pub optimize: OptimizeConfig,
    pub cost_map: CostMapConfig,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    /// 64 training envs (5 tasks × 12, rounded down), 32 evaluation envs,
    /// 300 outer updates, population 12 over 10 generations.
    pub fn desk() -> Self {
        Self {
            profile: Profile::Desk,
            seed: 1,
            output_dir: PathBuf::from("runs/desk"),
            design: DesignConfig { gears: false },
            nominal: NominalSpec::default(),
            terrain: TerrainConfig { train: vec![TerrainSpec::Preset("flat".into())] },
            env: EnvConfig::default(),
            policy: PolicyConfig { hidden: vec![64, 64] },
            ppo: PpoHyper::default(),
            meta: MetaHyper::default(),
            optimize: OptimizeConfig {
                metric: CostMetric::VelocityTracking,
                terrain: "flat".into(),
                population: 12,
                generations: 10,
                initial_sigma: 0.15,
                penalty_weight: 1e3,
                common_random_numbers: true,
                adapt_steps: 5,
                rollout_length: 50,
                inner_stepsize: 5e-4,
                adapt_envs: 12,
                eval_envs: 32,
                eval_transitions: 250,
            },
            cost_map: CostMapConfig { grid: 12 },
            eval: EvalConfig { episodes: 32, adapt_steps: 5, adapt_envs: 256, inner_stepsize: 5e-3 },
        }
    }

    /// 1000 training envs (5 tasks × 200), 300 evaluation envs, 2000 outer
    /// updates, population 35 over 30 generations, terrain curriculum.
    pub fn paper() -> Self {
        let desk = Self::desk();
        Self {
            profile: Profile::Paper,
            output_dir: PathBuf::from("runs/paper"),
            terrain: TerrainConfig {
                train: ["flat", "hard_hills", "hard_steps"].iter().map(|s| TerrainSpec::Preset(s.to_string())).collect(),
            },
            policy: PolicyConfig { hidden: vec![256, 128] },
            meta: MetaHyper { updates: 2000, envs_per_task: 200, ..MetaHyper::default() },
            optimize: OptimizeConfig { population: 35, generations: 30, adapt_envs: 200, eval_envs: 300, ..desk.optimize },
            eval: EvalConfig { episodes: 3000, adapt_steps: 5, adapt_envs: 300, inner_stepsize: 5e-4 },
            ..desk
        }
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Desk => Self::desk(),
            Profile::Paper => Self::paper(),
        }
    }

    /// Parse TOML: keys present override the chosen profile's values (default
    /// `desk`); unknown keys are rejected. The result is validated.
    pub fn from_toml(text: &str) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let profile = match user.get("profile") {
            None => Profile::Desk,
            Some(v) => v.clone().try_into().map_err(|e: toml::de::Error| Error::Config(format!("profile: {e}")))?,
        };
        let mut base = toml::Table::try_from(Self::for_profile(profile)).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, user);
        let cfg: Self = toml::Value::Table(base).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.nominal.validate()?;
        self.env.validate()?;
        self.ppo.validate()?;
        self.meta.validate()?;
        let g = (self.nominal.hip_gear, self.nominal.knee_gear);
        if self.design.gears && !((GEAR_BOUNDS.0..=GEAR_BOUNDS.1).contains(&g.0) && (GEAR_BOUNDS.0..=GEAR_BOUNDS.1).contains(&g.1)) {
            return Err(Error::Config(format!("nominal gear ratios must lie in {GEAR_BOUNDS:?} to optimize gears")));
        }
        if self.terrain.train.is_empty() {
            return Err(Error::Config("terrain.train must name at least one terrain".into()));
        }
        for t in &self.terrain.train {
            t.resolve()?;
        }
        TerrainParams::preset(&self.optimize.terrain)?;
        if self.policy.hidden.is_empty() || self.policy.hidden.contains(&0) {
            return Err(Error::Config("policy.hidden must list >= 1 positive layer width".into()));
        }
        self.optimize.search().validate()?;
        self.optimize.protocol(self.optimize.metric).validate()?;
        if self.eval.adapt_envs == 0 || !(self.eval.inner_stepsize.is_finite() && self.eval.inner_stepsize >= 0.0) {
            return Err(Error::Config("eval.adapt_envs must be >= 1 and eval.inner_stepsize finite and >= 0".into()));
        }
        if self.cost_map.grid == 0 {
            return Err(Error::Config("cost_map.grid must be >= 1".into()));
        }
        Ok(())
    }

    pub fn space(&self) -> DesignSpace {
        self.design.space()
    }

    pub fn nominal_design(&self) -> DesignParams {
        self.design.nominal(&self.nominal)
    }

    pub fn layout(&self) -> PolicyLayout {
        PolicyLayout::new(obs_dim(self.space().dim()), ACT_DIM, &self.policy.hidden)
    }

    /// Meta-training task pools.
    pub fn train_tasks(&self) -> Result<LocomotionTasks> {
        Ok(LocomotionTasks {
            env: self.env.clone(),
            nominal: self.nominal.clone(),
            space: self.space(),
            terrains: self.terrain.train.iter().map(TerrainSpec::resolve).collect::<Result<_>>()?,
            envs_per_task: self.meta.envs_per_task,
        })
    }

    /// Evaluation pools on one terrain preset.
    pub fn eval_tasks(&self, terrain: &str) -> Result<LocomotionTasks> {
        Ok(LocomotionTasks {
            env: self.env.clone(),
            nominal: self.nominal.clone(),
            space: self.space(),
            terrains: vec![TerrainParams::preset(terrain)?],
            envs_per_task: self.optimize.adapt_envs,
        })
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Recursive table merge; `over` wins.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
