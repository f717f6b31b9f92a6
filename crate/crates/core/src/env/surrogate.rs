//! A closed-form task family over the design space. The observation is the
//! design feature vector, the single action is scored by a quadratic around a
//! design-dependent optimum, and the velocity-tracking error is a known
//! function of the design. Episodes last one step.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::reward::{tracking_weight, Diagnostics, RewardTerms};
use super::{Environment, Step};
use crate::morphology::{design_to_features, DesignParams, DesignSpace};
use crate::seed::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateTask {
    /// Optimal action is `bias + weights · features`.
    pub target_weights: Vec<f64>,
    pub target_bias: f64,
    /// Per-step velocity cost is `floor + Σ curvature·(x − center)²`
    /// (plus noise of variance `noise²`).
    pub cost_center: Vec<f64>,
    pub cost_curvature: Vec<f64>,
    pub cost_floor: f64,
    pub noise: f64,
    pub mask_design: bool,
}

impl SurrogateTask {
    /// A 2-D family with an interior cost minimum at (0.83, 1.17).
    pub fn quadratic_2d() -> Self {
        Self {
            target_weights: vec![0.6, -0.4],
            target_bias: 0.1,
            cost_center: vec![0.83, 1.17],
            cost_curvature: vec![1.0, 2.0],
            cost_floor: 0.1,
            noise: 0.05,
            mask_design: false,
        }
    }

    pub fn optimal_action(&self, features: &[f64]) -> f64 {
        self.target_bias + self.target_weights.iter().zip(features).map(|(w, f)| w * f).sum::<f64>()
    }

    /// Noise-free part of the per-step velocity cost at `design`.
    pub fn velocity_cost(&self, design: &DesignParams) -> f64 {
        let x = design.to_vec();
        self.cost_floor
            + x.iter().zip(&self.cost_center).zip(&self.cost_curvature).map(|((x, c), k)| k * (x - c) * (x - c)).sum::<f64>()
    }

    /// Expected per-step velocity cost, noise included.
    pub fn expected_velocity_cost(&self, design: &DesignParams) -> f64 {
        self.velocity_cost(design) + self.noise * self.noise
    }
}

#[derive(Debug, Clone)]
pub struct SurrogateEnv {
    task: SurrogateTask,
    space: DesignSpace,
    design: DesignParams,
    features: Vec<f64>,
    rng_draw: f64,
}

impl SurrogateEnv {
    pub fn new(task: SurrogateTask, space: DesignSpace, design: &DesignParams) -> Self {
        let features = design_to_features(design, &space);
        Self { task, space, design: *design, features, rng_draw: 0.0 }
    }

    fn observe(&self) -> Vec<f64> {
        if self.task.mask_design {
            vec![0.0; self.features.len()]
        } else {
            self.features.clone()
        }
    }
}

impl Environment for SurrogateEnv {
    fn obs_dim(&self) -> usize {
        self.features.len()
    }

    fn act_dim(&self) -> usize {
        1
    }

    fn set_design(&mut self, design: &DesignParams) {
        self.design = *design;
        self.features = design_to_features(design, &self.space);
    }

    fn reset(&mut self, rng: &mut Rng) -> Vec<f64> {
        self.rng_draw = StandardNormal.sample(rng);
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Step {
        let err = action[0] - self.task.optimal_action(&self.features);
        let e_v = self.task.velocity_cost(&self.design).sqrt();
        let e_omega = self.task.noise * self.rng_draw;
        Step {
            obs: self.observe(),
            reward: -err * err,
            terms: RewardTerms::default(),
            diagnostics: Diagnostics {
                e_v,
                e_omega,
                torque_sq: 0.0,
                positive_power: 0.0,
                w_t: tracking_weight(e_v, e_omega),
                speed: 1.0,
            },
            terminal: true,
            truncated: false,
            diverged: false,
        }
    }
}
