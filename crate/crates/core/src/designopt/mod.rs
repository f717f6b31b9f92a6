//! Design search: cost functions, CMA-ES, Monte-Carlo fitness of adapted
//! policies, and cost maps.

pub mod cmaes;
pub mod cost;
pub mod costmap;
pub mod fitness;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::morphology::{DesignParams, DesignSpace};
use crate::nn::PolicyParams;
use crate::ppo::PpoHyper;
use crate::seed::{self, stream};
pub use cmaes::{cmaes_run, default_population, CmaRun, CmaSettings, CmaState, GenerationRecord, PopulationFitness};
pub use cost::{cost_power, cost_torque, cost_velocity, mcot, mean_cost, CostMetric};
pub use costmap::{cell_centers, cost_map, CostMap};
pub use fitness::{estimate_fitness, DesignFitness, EvalProtocol, FitnessEstimate, PenaltyTracker, PoolFactory};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
/// Path label of the final paired re-evaluation of nominal and best designs.
const FINAL_EVAL: u64 = 0x4649_4e41;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSettings {
    pub population: usize,
    pub generations: usize,
    /// Initial step size as a fraction of the box width.
    pub initial_sigma: f64,
    pub penalty_weight: f64,
    pub common_random_numbers: bool,
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self { population: 35, generations: 30, initial_sigma: 0.15, penalty_weight: 1e3, common_random_numbers: true }
    }
}

impl SearchSettings {
    pub fn validate(&self) -> Result<()> {
        if self.population < 2 {
            return Err(config_err("optimize.population must be >= 2"));
        }
        if !(self.initial_sigma.is_finite() && self.initial_sigma > 0.0) {
            return Err(config_err("optimize.initial_sigma must be > 0"));
        }
        if !(self.penalty_weight.is_finite() && self.penalty_weight >= 0.0) {
            return Err(config_err("optimize.penalty_weight must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationReport {
    pub schema_version: u32,
    pub metric: CostMetric,
    pub design_dim: usize,
    pub population: usize,
    pub generations_requested: usize,
    pub evaluations: usize,
    /// Per generation, in design units.
    pub generations: Vec<GenerationRecord>,
    pub best_design: Vec<f64>,
    /// Best (search-time) cost.
    pub best_cost: f64,
    pub nominal_design: Vec<f64>,
    /// Nominal and best design re-evaluated with identical seeds.
    pub nominal_cost: f64,
    pub best_reevaluated_cost: f64,
    /// `(nominal − best) / nominal × 100` from the paired re-evaluation.
    pub improvement_pct: f64,
}

impl OptimizationReport {
    /// `generation,best_cost,mean_cost,best_design_0,…` per generation.
    pub fn write_generations_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["generation".to_string(), "best_cost".into(), "mean_cost".into()];
        header.extend((0..self.design_dim).map(|i| format!("best_design_{i}")));
        w.write_record(&header)?;
        for g in &self.generations {
            let mut row = vec![g.generation.to_string(), g.best_cost.to_string(), g.mean_cost.to_string()];
            row.extend(g.best_design.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Box-normalized coordinates: `u ∈ [0, 1]ⁿ` ↔ design.
fn to_unit(space: &DesignSpace, x: &[f64]) -> Vec<f64> {
    x.iter().zip(&space.bounds).map(|(v, (lo, hi))| if hi > lo { (v - lo) / (hi - lo) } else { 0.5 }).collect()
}

fn from_unit(space: &DesignSpace, u: &[f64]) -> Vec<f64> {
    u.iter().zip(&space.bounds).map(|(v, (lo, hi))| lo + v * (hi - lo)).collect()
}

/// Run CMA-ES over the design box (in normalized coordinates, starting at
/// `nominal`), then re-evaluate the nominal and best designs under shared
/// seeds for the improvement figure.
#[allow(clippy::too_many_arguments)]
pub fn optimize_design<F: PoolFactory>(
    meta: &PolicyParams,
    factory: &F,
    space: &DesignSpace,
    nominal: &DesignParams,
    protocol: &EvalProtocol,
    ppo: &PpoHyper,
    search: &SearchSettings,
    seed: u64,
) -> Result<OptimizationReport> {
    search.validate()?;
    space.validate()?;
    if nominal.dim() != space.dim() {
        return Err(config_err("nominal design does not match the design space"));
    }
    let to_design = |u: &[f64]| DesignParams::from_slice(&from_unit(space, u));
    let mut fitness = DesignFitness {
        meta,
        protocol: *protocol,
        ppo: *ppo,
        factory,
        to_design: &to_design,
        seed,
        common_random_numbers: search.common_random_numbers,
        penalties: PenaltyTracker::default(),
        history: Vec::new(),
    };
    let settings = CmaSettings {
        population: search.population,
        generations: search.generations,
        penalty_weight: search.penalty_weight,
    };
    let unit_bounds = vec![(0.0, 1.0); space.dim()];
    let mut rng = seed::rng(seed, &[stream::CMA]);
    let run = cmaes_run(
        &mut fitness,
        &to_unit(space, &nominal.to_vec()),
        search.initial_sigma,
        &unit_bounds,
        &settings,
        &mut rng,
    )?;

    let best = to_design(&run.best_design)?;
    let path = [FINAL_EVAL];
    let nominal_eval = estimate_fitness(nominal, meta, protocol, ppo, factory, seed, &path)?;
    let best_eval = estimate_fitness(&best, meta, protocol, ppo, factory, seed, &path)?;
    let improvement = (nominal_eval.cost - best_eval.cost) / nominal_eval.cost * 100.0;

    let generations = run
        .generations
        .into_iter()
        .map(|g| GenerationRecord {
            designs: g.designs.iter().map(|u| from_unit(space, u)).collect(),
            best_design: from_unit(space, &g.best_design),
            ..g
        })
        .collect();
    Ok(OptimizationReport {
        schema_version: REPORT_SCHEMA_VERSION,
        metric: protocol.metric,
        design_dim: space.dim(),
        population: search.population,
        generations_requested: search.generations,
        evaluations: run.evaluations,
        generations,
        best_design: best.to_vec(),
        best_cost: run.best_cost,
        nominal_design: nominal.to_vec(),
        nominal_cost: nominal_eval.cost,
        best_reevaluated_cost: best_eval.cost,
        improvement_pct: improvement,
    })
}

/// Cost map with per-cell adaptation; all cells share evaluation seeds.
pub fn design_cost_map<F: PoolFactory>(
    grid: usize,
    meta: &PolicyParams,
    factory: &F,
    space: &DesignSpace,
    base: &DesignParams,
    protocol: &EvalProtocol,
    ppo: &PpoHyper,
    seed: u64,
) -> Result<CostMap> {
    cost_map(grid, space, base, |_, d| {
        let e = estimate_fitness(d, meta, protocol, ppo, factory, seed, &[stream::COSTMAP])?;
        Ok(if e.valid { e.cost } else { f64::NAN })
    })
}
