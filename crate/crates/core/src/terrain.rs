//! Parametrized 1-D terrains: flat ground, hills and steps.

use std::io::Write;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::seed::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerrainKind {
    Flat,
    Hills,
    Steps,
}

/// Difficulty presets for the named terrain levels.
pub const EASY: f64 = 0.3;
pub const MID: f64 = 0.6;
pub const HARD: f64 = 1.0;

pub const GRID_SPACING: f64 = 0.02;
pub const GRID_EXTENT: f64 = 40.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TerrainParams {
    pub kind: TerrainKind,
    pub difficulty: f64,
    /// Hill amplitude at difficulty 1 (m).
    pub amplitude: f64,
    /// Base hill frequency (1/m).
    pub frequency: f64,
    /// Per-node noise half-width at difficulty 1 (m).
    pub roughness: f64,
    pub step_width: f64,
    /// Maximum height change between plateaus at difficulty 1 (m).
    pub step_height: f64,
    pub friction_range: (f64, f64),
}

impl Default for TerrainParams {
    fn default() -> Self {
        Self {
            kind: TerrainKind::Flat,
            difficulty: 0.0,
            amplitude: 0.15,
            frequency: 0.25,
            roughness: 0.02,
            step_width: 0.4,
            step_height: 0.08,
            friction_range: (0.5, 1.0),
        }
    }
}

impl TerrainParams {
    pub fn flat() -> Self {
        Self::default()
    }

    pub fn hills(difficulty: f64) -> Self {
        Self { kind: TerrainKind::Hills, difficulty, ..Self::default() }
    }

    pub fn steps(difficulty: f64) -> Self {
        Self { kind: TerrainKind::Steps, difficulty, ..Self::default() }
    }

    /// Named presets: `flat`, `{easy,mid,hard}_{hills,steps}`.
    pub fn preset(name: &str) -> Result<Self> {
        let (level, kind) = match name {
            "flat" => return Ok(Self::flat()),
            _ => name
                .split_once('_')
                .ok_or_else(|| config_err(format!("unknown terrain preset `{name}`")))?,
        };
        let difficulty = match level {
            "easy" => EASY,
            "mid" => MID,
            "hard" => HARD,
            _ => return Err(config_err(format!("unknown terrain level `{level}`"))),
        };
        match kind {
            "hills" => Ok(Self::hills(difficulty)),
            "steps" => Ok(Self::steps(difficulty)),
            _ => Err(config_err(format!("unknown terrain kind `{kind}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.difficulty,
            self.amplitude,
            self.frequency,
            self.roughness,
            self.step_width,
            self.step_height,
            self.friction_range.0,
            self.friction_range.1,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(config_err("terrain parameters must be finite"));
        }
        if !(0.0..=1.0).contains(&self.difficulty) {
            return Err(config_err(format!("terrain difficulty {} outside [0, 1]", self.difficulty)));
        }
        if self.amplitude < 0.0 || self.roughness < 0.0 || self.step_height < 0.0 || self.frequency < 0.0 {
            return Err(config_err("terrain amplitude, frequency, roughness and step height must be >= 0"));
        }
        if self.step_width <= 0.0 {
            return Err(config_err("terrain step width must be > 0"));
        }
        let (lo, hi) = self.friction_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(config_err(format!("friction range ({lo}, {hi}) must satisfy 0 < min <= max")));
        }
        Ok(())
    }

    /// Same terrain with a different difficulty.
    pub fn at_difficulty(&self, difficulty: f64) -> Self {
        Self { difficulty, ..self.clone() }
    }
}

/// Elevation samples on a regular grid plus one friction coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heightfield {
    pub origin: f64,
    pub spacing: f64,
    pub heights: Vec<f64>,
    pub friction: f64,
    pub seed: u64,
}

impl Heightfield {
    pub fn flat(friction: f64) -> Self {
        let n = (GRID_EXTENT / GRID_SPACING).round() as usize + 1;
        Self { origin: -0.5 * GRID_EXTENT, spacing: GRID_SPACING, heights: vec![0.0; n], friction, seed: 0 }
    }

    pub fn from_heights(origin: f64, spacing: f64, heights: Vec<f64>, friction: f64) -> Self {
        assert!(spacing > 0.0 && !heights.is_empty());
        Self { origin, spacing, heights, friction, seed: 0 }
    }

    pub fn node_x(&self, i: usize) -> f64 {
        self.origin + i as f64 * self.spacing
    }

    fn locate(&self, x: f64) -> (usize, f64) {
        let n = self.heights.len();
        let u = (x - self.origin) / self.spacing;
        if !(u > 0.0) {
            return (0, 0.0);
        }
        if u >= (n - 1) as f64 {
            return (n - 1, 0.0);
        }
        let i = u.floor() as usize;
        (i, u - i as f64)
    }

    /// Linear interpolation between grid nodes, clamped at the extent.
    pub fn height_at(&self, x: f64) -> f64 {
        let (i, t) = self.locate(x);
        if t == 0.0 {
            return self.heights[i];
        }
        self.heights[i] + t * (self.heights[i + 1] - self.heights[i])
    }

    /// dh/dx of the interpolant; zero outside the extent.
    pub fn slope_at(&self, x: f64) -> f64 {
        let n = self.heights.len();
        let u = (x - self.origin) / self.spacing;
        if !(u >= 0.0) || u >= (n - 1) as f64 {
            return 0.0;
        }
        let i = u.floor() as usize;
        (self.heights[i + 1] - self.heights[i]) / self.spacing
    }

    /// Relative heights `h(x + o) - h(x)` for each offset.
    pub fn height_scan(&self, x_center: f64, offsets: &[f64]) -> Vec<f64> {
        let h0 = self.height_at(x_center);
        offsets.iter().map(|o| self.height_at(x_center + o) - h0).collect()
    }

    pub fn max_abs_height(&self) -> f64 {
        self.heights.iter().fold(0.0, |m, h| m.max(h.abs()))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "h"])?;
        for (i, h) in self.heights.iter().enumerate() {
            w.write_record([format!("{}", self.node_x(i)), format!("{h}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Generate a heightfield. Deterministic in `(params, seed)`.
pub fn generate(params: &TerrainParams, seed: u64) -> Result<Heightfield> {
    params.validate()?;
    let mut rng = seed::rng(seed, &[]);
    generate_with(params, &mut rng, seed)
}

fn generate_with(params: &TerrainParams, rng: &mut Rng, seed: u64) -> Result<Heightfield> {
    let mut field = Heightfield::flat(1.0);
    field.seed = seed;
    let d = params.difficulty;
    match params.kind {
        TerrainKind::Flat => {}
        TerrainKind::Hills => {
            let a = params.amplitude * d;
            let r = params.roughness * d;
            let two_pi = std::f64::consts::TAU;
            let p1 = rng.random_range(0.0..two_pi);
            let p2 = rng.random_range(0.0..two_pi);
            let f = params.frequency;
            for i in 0..field.heights.len() {
                let x = field.node_x(i);
                // Noise is drawn even at zero roughness so the draw sequence
                // (and friction below) does not depend on difficulty.
                let u: f64 = rng.random_range(-1.0..=1.0);
                field.heights[i] = a * (two_pi * f * x + p1).sin()
                    + (a / 3.0) * (two_pi * 2.7 * f * x + p2).sin()
                    + r * u;
            }
        }
        TerrainKind::Steps => {
            let hmax = params.step_height * d;
            let offset = rng.random_range(0.0..params.step_width);
            let mut level = 0.0;
            let mut current_plateau = None;
            for i in 0..field.heights.len() {
                let x = field.node_x(i) - field.origin + offset;
                let plateau = (x / params.step_width).floor() as i64;
                if current_plateau != Some(plateau) {
                    if current_plateau.is_some() {
                        let u: f64 = rng.random_range(-1.0..=1.0);
                        level += hmax * u;
                    }
                    current_plateau = Some(plateau);
                }
                field.heights[i] = level;
            }
            // Put the start plateau at zero elevation.
            let h0 = field.height_at(0.0);
            field.heights.iter_mut().for_each(|h| *h -= h0);
        }
    }
    let (lo, hi) = params.friction_range;
    field.friction = if lo == hi { lo } else { rng.random_range(lo..=hi) };
    Ok(field)
}
