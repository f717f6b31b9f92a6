//! Design cost functions over per-step diagnostics.

use serde::{Deserialize, Serialize};

use crate::env::{tracking_weight, Diagnostics};
use crate::error::{Error, Result};

/// Below this mean speed (m/s) the cost of transport is undefined.
pub const MIN_MCOT_SPEED: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMetric {
    VelocityTracking,
    WeightedTorque,
    WeightedPower,
    Mcot,
}

impl CostMetric {
    /// Parse the CLI spelling (`velocity`, `torque`, `power`, `mcot`) or the
    /// full name.
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "velocity" | "velocity_tracking" => Self::VelocityTracking,
            "torque" | "weighted_torque" => Self::WeightedTorque,
            "power" | "weighted_power" => Self::WeightedPower,
            "mcot" => Self::Mcot,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::VelocityTracking => "velocity_tracking",
            Self::WeightedTorque => "weighted_torque",
            Self::WeightedPower => "weighted_power",
            Self::Mcot => "mcot",
        }
    }
}

/// `e_v² + e_ω²` of one step.
pub fn step_velocity_cost(d: &Diagnostics) -> f64 {
    d.e_v * d.e_v + d.e_omega * d.e_omega
}

/// `w_t·Σᵢτᵢ²` of one step.
pub fn step_torque_cost(d: &Diagnostics) -> f64 {
    tracking_weight(d.e_v, d.e_omega) * d.torque_sq
}

/// `w_t·Σᵢmax(φ̇ᵢτᵢ, 0)` of one step.
pub fn step_power_cost(d: &Diagnostics) -> f64 {
    tracking_weight(d.e_v, d.e_omega) * d.positive_power
}

/// `Σ_t (e_v² + e_ω²)`.
pub fn cost_velocity(diags: &[Diagnostics]) -> f64 {
    diags.iter().map(step_velocity_cost).sum()
}

/// `Σ_t w_t·Σᵢτᵢ²` with `w_t = min(exp(1.5·(e_v² + e_ω²)), 100)`.
pub fn cost_torque(diags: &[Diagnostics]) -> f64 {
    diags.iter().map(step_torque_cost).sum()
}

/// `Σ_t w_t·Σᵢmax(φ̇ᵢτᵢ, 0)`.
pub fn cost_power(diags: &[Diagnostics]) -> f64 {
    diags.iter().map(step_power_cost).sum()
}

/// Mechanical cost of transport: mean positive power over `m·g·mean speed`.
pub fn mcot(diags: &[Diagnostics], total_mass: f64, gravity: f64) -> Result<f64> {
    if diags.is_empty() {
        return Err(Error::UndefinedMetric("no steps to average".into()));
    }
    let n = diags.len() as f64;
    let speed = diags.iter().map(|d| d.speed).sum::<f64>() / n;
    if speed < MIN_MCOT_SPEED {
        return Err(Error::UndefinedMetric(format!("mean speed {speed:.4} m/s is below {MIN_MCOT_SPEED} m/s")));
    }
    let power = diags.iter().map(|d| d.positive_power).sum::<f64>() / n;
    Ok(power / (total_mass * gravity * speed))
}

/// Mean per-step cost of `metric` over `diags` (MCOT is already a ratio of
/// means).
pub fn mean_cost(metric: CostMetric, diags: &[Diagnostics], total_mass: f64, gravity: f64) -> Result<f64> {
    if diags.is_empty() {
        return Err(Error::UndefinedMetric("no steps to average".into()));
    }
    let n = diags.len() as f64;
    Ok(match metric {
        CostMetric::VelocityTracking => cost_velocity(diags) / n,
        CostMetric::WeightedTorque => cost_torque(diags) / n,
        CostMetric::WeightedPower => cost_power(diags) / n,
        CostMetric::Mcot => mcot(diags, total_mass, gravity)?,
    })
}
