//! The locomotion MDP: gait phases, PD action interface, observation
//! assembly, reward and termination. A closed-form surrogate task family with
//! the same interface lives in [`surrogate`].

pub mod reward;
pub mod surrogate;

use std::f64::consts::TAU;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::morphology::{build_robot, design_to_features, DesignParams, DesignSpace, NominalSpec, FRONT, HIND};
use crate::seed::Rng;
use crate::sim::actuator::actuator_torque;
use crate::sim::{standing_pose, state_at_pose, Quadruped, SimParams, SimState};
use crate::terrain::{generate, Heightfield, TerrainParams};
pub use reward::{compute_reward, tracking_weight, REWARD_TERM_NAMES, Command, Diagnostics, RewardInputs, RewardTerms};

pub const ACT_DIM: usize = 6;
/// Observation slots before the design features.
pub const BASE_OBS_DIM: usize = 45;
/// Observation entries are clamped to `[−OBS_CLIP, OBS_CLIP]`.
pub const OBS_CLIP: f64 = 10.0;

pub fn obs_dim(design_dim: usize) -> usize {
    BASE_OBS_DIM + design_dim
}

/// Draw a forward-velocity command uniformly from `range`.
pub fn sample_command(rng: &mut Rng, range: (f64, f64)) -> Command {
    let (lo, hi) = range;
    Command::forward(if lo == hi { lo } else { rng.random_range(lo..=hi) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub sim: SimParams,
    /// Control steps per episode.
    pub episode_length: usize,
    pub command_range: (f64, f64),
    pub kp: f64,
    pub kd: f64,
    /// Crouch angle of the nominal standing pose (rad).
    pub crouch: f64,
    /// Base gait frequency f₀ (Hz).
    pub base_frequency: f64,
    /// Joint-target residual per unit action (rad).
    pub joint_action_scale: f64,
    /// Frequency offset per unit action (Hz).
    pub frequency_action_scale: f64,
    /// Extra crouch of a leg at the top of its swing phase (rad); 0 leaves
    /// foot lifting entirely to the policy.
    pub swing_lift: f64,
    /// Uniform joint perturbation at reset (rad).
    pub init_noise: f64,
    /// Base height above the local terrain below which the robot has fallen (m).
    pub fall_height: f64,
    pub max_pitch: f64,
    pub clearance_threshold: f64,
    /// Height-scan offsets along x from each foot (m).
    pub scan_offsets: [f64; 5],
    /// Replace the design features in the observation by zeros.
    pub mask_design: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            sim: SimParams::default(),
            episode_length: 500,
            command_range: (-1.0, 1.5),
            kp: 150.0,
            kd: 3.0,
            crouch: 0.6,
            base_frequency: 1.25,
            joint_action_scale: 0.6,
            frequency_action_scale: 1.0,
            swing_lift: 0.0,
            init_noise: 0.05,
            fall_height: 0.18,
            max_pitch: 1.2,
            clearance_threshold: 0.03,
            scan_offsets: [-0.2, -0.1, 0.0, 0.1, 0.2],
            mask_design: false,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        if self.episode_length == 0 {
            return Err(config_err("env.episode_length must be >= 1"));
        }
        let (lo, hi) = self.command_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(config_err("env.command_range must be a finite [lo, hi] with lo <= hi"));
        }
        let nonneg = [
            ("kp", self.kp),
            ("kd", self.kd),
            ("joint_action_scale", self.joint_action_scale),
            ("frequency_action_scale", self.frequency_action_scale),
            ("swing_lift", self.swing_lift),
            ("init_noise", self.init_noise),
            ("fall_height", self.fall_height),
            ("clearance_threshold", self.clearance_threshold),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(config_err(format!("env.{name} must be finite and >= 0")));
            }
        }
        if !(self.base_frequency.is_finite() && self.base_frequency > 0.0) {
            return Err(config_err("env.base_frequency must be > 0"));
        }
        if !(self.max_pitch.is_finite() && self.max_pitch > 0.0) || !self.crouch.is_finite() {
            return Err(config_err("env.max_pitch must be > 0 and env.crouch finite"));
        }
        if self.scan_offsets.iter().any(|v| !v.is_finite()) {
            return Err(config_err("env.scan_offsets must be finite"));
        }
        Ok(())
    }
}

/// Outcome of one control step.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub terms: RewardTerms,
    pub diagnostics: Diagnostics,
    /// The episode ended in a failure state (no bootstrapping).
    pub terminal: bool,
    /// The episode hit its length limit.
    pub truncated: bool,
    /// The simulation diverged; the episode ends as if terminal.
    pub diverged: bool,
}

impl Step {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

/// Minimal interface the learners need from a task.
pub trait Environment: Send {
    fn obs_dim(&self) -> usize;
    fn act_dim(&self) -> usize;
    fn set_design(&mut self, design: &DesignParams);
    /// Start a fresh episode, drawing all episode randomness from `rng`.
    fn reset(&mut self, rng: &mut Rng) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> Step;
}

/// The planar quadruped on procedurally generated terrain.
#[derive(Debug, Clone)]
pub struct LocomotionEnv {
    config: EnvConfig,
    nominal: NominalSpec,
    space: DesignSpace,
    terrain: TerrainParams,
    design: DesignParams,
    features: Vec<f64>,
    robot: Quadruped,
    field: Heightfield,
    state: SimState,
    command: Command,
    phase: [f64; 2],
    frequency: [f64; 2],
    actions: [[f64; 6]; 2],
    /// Joint targets relative to the standing pose, newest first. The
    /// second difference is blind to the constant offset.
    targets: [[f64; 4]; 3],
    t: usize,
}

impl LocomotionEnv {
    pub fn new(
        config: EnvConfig,
        nominal: NominalSpec,
        space: DesignSpace,
        terrain: TerrainParams,
        design: &DesignParams,
    ) -> Result<Self> {
        config.validate()?;
        nominal.validate()?;
        terrain.validate()?;
        space.validate()?;
        if design.dim() != space.dim() {
            return Err(config_err("design dimension does not match the design space"));
        }
        let robot = Quadruped::new(&build_robot(design, &nominal), config.sim.gravity);
        let mut env = Self {
            features: Vec::new(),
            robot,
            field: Heightfield::flat(1.0),
            state: state_at_pose(standing_pose(config.crouch)),
            command: Command::forward(0.0),
            phase: [0.0, std::f64::consts::PI],
            frequency: [config.base_frequency; 2],
            actions: [[0.0; 6]; 2],
            targets: [[0.0; 4]; 3],
            t: 0,
            design: *design,
            config,
            nominal,
            space,
            terrain,
        };
        env.set_design(design);
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn design(&self) -> &DesignParams {
        &self.design
    }

    pub fn robot(&self) -> &Quadruped {
        &self.robot
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn field(&self) -> &Heightfield {
        &self.field
    }

    /// Overwrite the robot state (contact flags are recomputed).
    pub fn set_state(&mut self, mut state: SimState) {
        self.robot.update_contacts(&mut state, &self.field);
        self.state = state;
    }

    pub fn command(&self) -> Command {
        self.command
    }

    pub fn phase(&self) -> [f64; 2] {
        self.phase
    }

    pub fn terrain(&self) -> &TerrainParams {
        &self.terrain
    }

    pub fn set_terrain(&mut self, terrain: TerrainParams) {
        self.terrain = terrain;
    }

    /// Begin an episode on a given heightfield with a given command.
    /// Joint perturbations come from `rng`.
    pub fn reset_with(&mut self, field: Heightfield, command: Command, rng: &mut Rng) -> Vec<f64> {
        let noise = self.config.init_noise;
        let mut joints = standing_pose(self.config.crouch);
        for j in &mut joints {
            if noise > 0.0 {
                *j += rng.random_range(-noise..=noise);
            }
        }
        let mut state = state_at_pose(joints);
        self.robot.seat_on_terrain(&mut state, &field);
        self.state = state;
        self.field = field;
        self.command = command;
        self.phase = [0.0, std::f64::consts::PI];
        self.frequency = [self.config.base_frequency; 2];
        self.actions = [[0.0; 6]; 2];
        self.targets = [[0.0; 4]; 3];
        self.t = 0;
        self.observe()
    }

    /// Joint targets: standing pose, swing lift and the action residual.
    fn joint_targets(&self, residual: &[f64; 4]) -> [f64; 4] {
        let mut q = [0.0; 4];
        for leg in [FRONT, HIND] {
            let lift = self.config.swing_lift * self.phase[leg].sin().max(0.0);
            let pose = standing_pose(self.config.crouch + lift);
            q[2 * leg] = pose[2 * leg] + residual[2 * leg];
            q[2 * leg + 1] = pose[2 * leg + 1] + residual[2 * leg + 1];
        }
        q
    }

    fn observe(&self) -> Vec<f64> {
        let s = &self.state;
        let c = &self.config;
        let nominal = standing_pose(c.crouch);
        let mut o = Vec::with_capacity(obs_dim(self.features.len()));
        o.push(self.command.vx);
        o.extend([s.vx(), s.vz(), s.pitch(), 0.25 * s.pitch_rate()]);
        o.extend(s.joint_angles().iter().zip(nominal).map(|(q, n)| q - n));
        o.extend(s.joint_velocities().iter().map(|w| 0.1 * w));
        for p in self.phase {
            o.extend([p.sin(), p.cos()]);
        }
        o.extend(self.frequency.iter().map(|f| f - c.base_frequency));
        o.extend(self.actions.iter().flatten());
        o.extend(s.foot_contact.iter().map(|&b| if b { 1.0 } else { 0.0 }));
        o.push(if s.nonfoot_contacts > 0 { 1.0 } else { 0.0 });
        for leg in [FRONT, HIND] {
            let foot = self.robot.foot_position(s, leg);
            let bottom = foot[1] - self.robot.model.foot_radius;
            o.extend(c.scan_offsets.iter().map(|dx| 5.0 * (bottom - self.field.height_at(foot[0] + dx))));
        }
        o.push(self.field.friction);
        if c.mask_design {
            o.extend(std::iter::repeat_n(0.0, self.features.len()));
        } else {
            o.extend(&self.features);
        }
        for v in &mut o {
            *v = if v.is_nan() { 0.0 } else { v.clamp(-OBS_CLIP, OBS_CLIP) };
        }
        o
    }

    fn fallen(&self) -> bool {
        let s = &self.state;
        s.base_z() - self.field.height_at(s.base_x()) < self.config.fall_height || s.pitch().abs() > self.config.max_pitch
    }
}

impl Environment for LocomotionEnv {
    fn obs_dim(&self) -> usize {
        obs_dim(self.features.len())
    }

    fn act_dim(&self) -> usize {
        ACT_DIM
    }

    fn set_design(&mut self, design: &DesignParams) {
        self.design = *design;
        self.features = design_to_features(design, &self.space);
        self.robot = Quadruped::new(&build_robot(design, &self.nominal), self.config.sim.gravity);
    }

    fn reset(&mut self, rng: &mut Rng) -> Vec<f64> {
        let terrain_seed = rng.random::<u64>();
        let field = generate(&self.terrain, terrain_seed).expect("terrain parameters validated at construction");
        let command = sample_command(rng, self.config.command_range);
        self.reset_with(field, command, rng)
    }

    fn step(&mut self, action: &[f64]) -> Step {
        assert_eq!(action.len(), ACT_DIM, "action width");
        let c = self.config.clone();
        let mut u = [0.0; 6];
        for (dst, a) in u.iter_mut().zip(action) {
            *dst = if a.is_nan() { 0.0 } else { a.clamp(-1.0, 1.0) };
        }
        let control_dt = c.sim.control_dt();
        for leg in [FRONT, HIND] {
            self.frequency[leg] = c.base_frequency + c.frequency_action_scale * u[4 + leg];
            self.phase[leg] = (self.phase[leg] + TAU * self.frequency[leg] * control_dt).rem_euclid(TAU);
        }
        let residual = [u[0], u[1], u[2], u[3]].map(|x| c.joint_action_scale * x);
        let target = self.joint_targets(&residual);

        let mut state = self.state;
        let mut diverged = false;
        for _ in 0..c.sim.substeps {
            let q = state.joint_angles();
            let qd = state.joint_velocities();
            let mut tau = [0.0; 4];
            for j in 0..4 {
                let cmd = c.kp * (target[j] - q[j]) - c.kd * qd[j];
                tau[j] = actuator_torque(cmd, qd[j], &self.robot.model.joints[j].actuator);
            }
            match self.robot.step(&state, &tau, &self.field, &c.sim) {
                Ok(next) => state = next,
                Err(_) => {
                    diverged = true;
                    break;
                }
            }
        }

        self.t += 1;
        if diverged {
            return Step {
                obs: self.observe(),
                reward: 0.0,
                terms: RewardTerms::default(),
                diagnostics: Diagnostics::default(),
                terminal: true,
                truncated: false,
                diverged: true,
            };
        }
        self.state = state;
        self.actions = [u, self.actions[0]];
        let pose = standing_pose(c.crouch);
        let relative = [0, 1, 2, 3].map(|j| target[j] - pose[j]);
        self.targets = [relative, self.targets[0], self.targets[1]];

        let swing = self.phase.map(|p| p.sin() > 0.0);
        let clearance = [FRONT, HIND].map(|leg| self.robot.foot_clearance(&state, &self.field, leg));
        let inputs = RewardInputs {
            command: self.command,
            actions: self.actions,
            targets: self.targets,
            swing,
            clearance,
            clearance_threshold: c.clearance_threshold,
        };
        let (reward, terms) = compute_reward(&state, &inputs);
        let terminal = self.fallen();
        Step {
            obs: self.observe(),
            reward,
            terms,
            diagnostics: Diagnostics::from_state(&state, &self.command),
            terminal,
            truncated: !terminal && self.t >= c.episode_length,
            diverged: false,
        }
    }
}
