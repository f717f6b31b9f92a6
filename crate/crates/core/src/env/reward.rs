//! Per-step reward terms and the tracking/effort diagnostics consumed by the
//! design cost functions.

use serde::{Deserialize, Serialize};

use crate::sim::SimState;

/// Target velocities. The pitch-rate target is 0 in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Command {
    pub vx: f64,
    pub pitch_rate: f64,
}

impl Command {
    pub fn forward(vx: f64) -> Self {
        Self { vx, pitch_rate: 0.0 }
    }
}

/// Signed weights of the reward terms, in [`RewardTerms::as_array`] order.
pub const REWARD_WEIGHTS: [f64; 9] = [0.5, 0.2, 0.1, 0.1, 0.005, -0.5, -0.05, -0.005, -0.001];
pub const REWARD_TERM_NAMES: [&str; 9] =
    ["r_v", "r_omega", "r_vstab", "r_omegastab", "r_fm", "r_bc", "r_ts", "r_ms", "r_tau"];

/// Unweighted reward terms of one step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardTerms {
    pub r_v: f64,
    pub r_omega: f64,
    pub r_vstab: f64,
    pub r_omegastab: f64,
    pub r_fm: f64,
    pub r_bc: f64,
    pub r_ts: f64,
    pub r_ms: f64,
    pub r_tau: f64,
}

impl RewardTerms {
    pub fn as_array(&self) -> [f64; 9] {
        [self.r_v, self.r_omega, self.r_vstab, self.r_omegastab, self.r_fm, self.r_bc, self.r_ts, self.r_ms, self.r_tau]
    }

    pub fn weighted_total(&self) -> f64 {
        self.as_array().iter().zip(REWARD_WEIGHTS).map(|(t, w)| w * t).sum()
    }
}

/// Everything the reward looks at besides the robot state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardInputs {
    pub command: Command,
    /// Clipped actions `u_t`, `u_{t−1}`.
    pub actions: [[f64; 6]; 2],
    /// Joint targets `q*_t`, `q*_{t−1}`, `q*_{t−2}`.
    pub targets: [[f64; 4]; 3],
    /// Which feet are in the swing half of their phase.
    pub swing: [bool; 2],
    /// Vertical foot clearance above the local terrain (m).
    pub clearance: [f64; 2],
    /// Clearance a swing foot needs to count as lifted (m).
    pub clearance_threshold: f64,
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// Weighted reward of the transition ending in `next`, with its terms.
pub fn compute_reward(next: &SimState, inputs: &RewardInputs) -> (f64, RewardTerms) {
    let c = &inputs.command;
    let ev = c.vx - next.vx();
    let ew = c.pitch_rate - next.pitch_rate();
    let swing = inputs.swing.iter().filter(|s| **s).count();
    let lifted = (0..2).filter(|&i| inputs.swing[i] && inputs.clearance[i] >= inputs.clearance_threshold).count();
    let [q0, q1, q2] = &inputs.targets;
    let [u0, u1] = &inputs.actions;
    let terms = RewardTerms {
        r_v: (-1.5 * ev * ev).exp(),
        r_omega: (-2.0 * ew * ew).exp(),
        r_vstab: (-1.5 * next.vz() * next.vz()).exp(),
        r_omegastab: 1.0,
        r_fm: if swing == 0 { 0.0 } else { lifted as f64 / swing as f64 },
        r_bc: next.nonfoot_contacts as f64,
        r_ts: norm((0..4).map(|i| q0[i] - 2.0 * q1[i] + q2[i])),
        r_ms: norm((0..6).map(|i| u0[i] - u1[i])),
        r_tau: next.torques.iter().map(|t| t.abs()).sum(),
    };
    (terms.weighted_total(), terms)
}

/// Weight applied to effort costs: `min(exp(1.5·(e_v² + e_ω²)), 100)`.
pub fn tracking_weight(e_v: f64, e_omega: f64) -> f64 {
    (1.5 * (e_v * e_v + e_omega * e_omega)).exp().min(100.0)
}

/// Per-step quantities behind the design cost functions. All are functions
/// of the end-of-step state and the command.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub e_v: f64,
    pub e_omega: f64,
    /// `Σᵢ τᵢ²` (N²·m²).
    pub torque_sq: f64,
    /// `Σᵢ max(φ̇ᵢ τᵢ, 0)` (W).
    pub positive_power: f64,
    pub w_t: f64,
    /// Horizontal base speed `|vₓ|` (m/s).
    pub speed: f64,
}

impl Diagnostics {
    pub fn from_state(state: &SimState, command: &Command) -> Self {
        let e_v = command.vx - state.vx();
        let e_omega = command.pitch_rate - state.pitch_rate();
        let qd = state.joint_velocities();
        Self {
            e_v,
            e_omega,
            torque_sq: state.torques.iter().map(|t| t * t).sum(),
            positive_power: state.torques.iter().zip(qd).map(|(t, w)| (t * w).max(0.0)).sum(),
            w_t: tracking_weight(e_v, e_omega),
            speed: state.vx().abs(),
        }
    }
}
