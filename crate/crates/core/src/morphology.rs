//! Design space, task distribution and the mapping from design parameters to
//! a concrete planar robot.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::seed::Rng;
use crate::sim::actuator::ActuatorSpec;

pub const LINK_SCALE_BOUNDS: (f64, f64) = (0.6, 1.4);
pub const GEAR_BOUNDS: (f64, f64) = (2.8, 12.0);

/// A point in design space: the task of the meta-learning problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignParams {
    pub thigh_scale: f64,
    pub shank_scale: f64,
    /// `(hip, knee)` gear ratios, present only in the 4-D design space.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gears: Option<(f64, f64)>,
}

impl DesignParams {
    pub fn links(thigh_scale: f64, shank_scale: f64) -> Self {
        Self { thigh_scale, shank_scale, gears: None }
    }

    pub fn with_gears(thigh_scale: f64, shank_scale: f64, hip_gear: f64, knee_gear: f64) -> Self {
        Self { thigh_scale, shank_scale, gears: Some((hip_gear, knee_gear)) }
    }

    pub fn dim(&self) -> usize {
        if self.gears.is_some() { 4 } else { 2 }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.thigh_scale, self.shank_scale];
        if let Some((h, k)) = self.gears {
            v.extend([h, k]);
        }
        v
    }

    pub fn from_slice(x: &[f64]) -> Result<Self> {
        match x {
            [t, s] => Ok(Self::links(*t, *s)),
            [t, s, h, k] => Ok(Self::with_gears(*t, *s, *h, *k)),
            _ => Err(config_err(format!("design vector must have 2 or 4 entries, got {}", x.len()))),
        }
    }
}

/// Per-dimension bounds of the design space. Dimensionality is 2 (link
/// scales) or 4 (link scales, hip gear, knee gear).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpace {
    pub bounds: Vec<(f64, f64)>,
}

impl DesignSpace {
    pub fn links_only() -> Self {
        Self { bounds: vec![LINK_SCALE_BOUNDS; 2] }
    }

    pub fn with_gears() -> Self {
        Self { bounds: vec![LINK_SCALE_BOUNDS, LINK_SCALE_BOUNDS, GEAR_BOUNDS, GEAR_BOUNDS] }
    }

    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self> {
        let space = Self { bounds };
        space.validate()?;
        Ok(space)
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim() != 2 && self.dim() != 4 {
            return Err(config_err(format!("design space must be 2-D or 4-D, got {}-D", self.dim())));
        }
        for (i, &(lo, hi)) in self.bounds.iter().enumerate() {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(config_err(format!("design bound {i} is not finite")));
            }
            if lo > hi {
                return Err(config_err(format!("design bound {i}: lower {lo} exceeds upper {hi}")));
            }
            if lo <= 0.0 {
                return Err(config_err(format!("design bound {i}: scales and gears must be positive")));
            }
        }
        Ok(())
    }

    pub fn contains(&self, design: &DesignParams) -> bool {
        let x = design.to_vec();
        x.len() == self.dim() && x.iter().zip(&self.bounds).all(|(v, &(lo, hi))| *v >= lo && *v <= hi)
    }

    pub fn clip(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.bounds).map(|(v, &(lo, hi))| v.clamp(lo, hi)).collect()
    }

    /// Nominal design: unit link scales and, in 4-D mode, the nominal gears.
    pub fn nominal(&self, nominal: &NominalSpec) -> DesignParams {
        if self.dim() == 4 {
            DesignParams::with_gears(1.0, 1.0, nominal.hip_gear, nominal.knee_gear)
        } else {
            DesignParams::links(1.0, 1.0)
        }
    }
}

/// Draw a design uniformly from the box. Coordinates are independent.
pub fn sample_design(rng: &mut Rng, space: &DesignSpace) -> Result<DesignParams> {
    space.validate()?;
    let x: Vec<f64> = space
        .bounds
        .iter()
        .map(|&(lo, hi)| if lo == hi { lo } else { rng.random_range(lo..=hi) })
        .collect();
    DesignParams::from_slice(&x)
}

/// Affine map of each coordinate onto `[-1, 1]`. Collapsed intervals map to 0.
pub fn design_to_features(design: &DesignParams, space: &DesignSpace) -> Vec<f64> {
    design
        .to_vec()
        .iter()
        .zip(&space.bounds)
        .map(|(v, &(lo, hi))| if hi > lo { 2.0 * (v - lo) / (hi - lo) - 1.0 } else { 0.0 })
        .collect()
}

pub fn features_to_design(features: &[f64], space: &DesignSpace) -> Result<DesignParams> {
    let x: Vec<f64> = features
        .iter()
        .zip(&space.bounds)
        .map(|(f, &(lo, hi))| lo + 0.5 * (f + 1.0) * (hi - lo))
        .collect();
    DesignParams::from_slice(&x)
}

/// Nominal robot before scaling. All values are configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NominalSpec {
    pub thigh_length: f64,
    pub shank_length: f64,
    pub thigh_mass: f64,
    pub shank_mass: f64,
    pub body_mass: f64,
    /// Hip-to-hip distance.
    pub body_length: f64,
    pub body_height: f64,
    pub hip_gear: f64,
    pub knee_gear: f64,
    /// Motor-side stall torque (N·m) shared by all joints.
    pub motor_stall_torque: f64,
    /// Motor-side no-load speed (rad/s).
    pub motor_no_load_speed: f64,
    pub foot_radius: f64,
    pub knee_radius: f64,
    pub body_corner_radius: f64,
}

impl Default for NominalSpec {
    fn default() -> Self {
        Self {
            thigh_length: 0.35,
            shank_length: 0.35,
            thigh_mass: 1.2,
            shank_mass: 0.8,
            body_mass: 20.0,
            body_length: 0.6,
            body_height: 0.15,
            hip_gear: 5.6,
            knee_gear: 8.0,
            motor_stall_torque: 10.0,
            motor_no_load_speed: 120.0,
            foot_radius: 0.02,
            knee_radius: 0.03,
            body_corner_radius: 0.03,
        }
    }
}

impl NominalSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("thigh_length", self.thigh_length),
            ("shank_length", self.shank_length),
            ("thigh_mass", self.thigh_mass),
            ("shank_mass", self.shank_mass),
            ("body_mass", self.body_mass),
            ("body_length", self.body_length),
            ("body_height", self.body_height),
            ("hip_gear", self.hip_gear),
            ("knee_gear", self.knee_gear),
            ("motor_stall_torque", self.motor_stall_torque),
            ("motor_no_load_speed", self.motor_no_load_speed),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(config_err(format!("nominal.{name} must be finite and > 0, got {v}")));
            }
        }
        for (name, v) in [
            ("foot_radius", self.foot_radius),
            ("knee_radius", self.knee_radius),
            ("body_corner_radius", self.body_corner_radius),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(config_err(format!("nominal.{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// One rigid link. COM sits at the midpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub length: f64,
    pub mass: f64,
    pub com_offset: f64,
    /// Rotational inertia about the COM (thin rod).
    pub inertia: f64,
}

impl Link {
    pub fn rod(length: f64, mass: f64) -> Self {
        Self { length, mass, com_offset: 0.5 * length, inertia: mass * length * length / 12.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub actuator: ActuatorSpec,
}

impl Joint {
    pub fn torque_limit(&self) -> f64 {
        self.actuator.stall_torque()
    }

    pub fn speed_limit(&self) -> f64 {
        self.actuator.no_load_speed()
    }
}

/// Leg index order used everywhere: front leg first, then hind leg.
pub const FRONT: usize = 0;
pub const HIND: usize = 1;

/// Concrete planar quadruped. Two legs (front, hind), each a thigh and a
/// shank; joints ordered `[front hip, front knee, hind hip, hind knee]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotModel {
    pub body_mass: f64,
    pub body_length: f64,
    pub body_height: f64,
    pub body_inertia: f64,
    pub thigh: Link,
    pub shank: Link,
    pub joints: [Joint; 4],
    pub foot_radius: f64,
    pub knee_radius: f64,
    pub body_corner_radius: f64,
}

impl RobotModel {
    pub fn total_mass(&self) -> f64 {
        self.body_mass + 2.0 * (self.thigh.mass + self.shank.mass)
    }

    /// Hip x offset in the base frame for `leg`.
    pub fn hip_offset(&self, leg: usize) -> f64 {
        if leg == FRONT { 0.5 * self.body_length } else { -0.5 * self.body_length }
    }
}

/// Scale the nominal robot by `design`. Link mass follows link length; rod
/// inertia is recomputed from the scaled values.
pub fn build_robot(design: &DesignParams, nominal: &NominalSpec) -> RobotModel {
    let (hip_gear, knee_gear) = design.gears.unwrap_or((nominal.hip_gear, nominal.knee_gear));
    let motor = |gear| Joint {
        actuator: ActuatorSpec {
            motor_stall_torque: nominal.motor_stall_torque,
            motor_no_load_speed: nominal.motor_no_load_speed,
            gear,
        },
    };
    let hip = motor(hip_gear);
    let knee = motor(knee_gear);
    let body_inertia = nominal.body_mass
        * (nominal.body_length * nominal.body_length + nominal.body_height * nominal.body_height)
        / 12.0;
    RobotModel {
        body_mass: nominal.body_mass,
        body_length: nominal.body_length,
        body_height: nominal.body_height,
        body_inertia,
        thigh: Link::rod(design.thigh_scale * nominal.thigh_length, design.thigh_scale * nominal.thigh_mass),
        shank: Link::rod(design.shank_scale * nominal.shank_length, design.shank_scale * nominal.shank_mass),
        joints: [hip, knee, hip, knee],
        foot_radius: nominal.foot_radius,
        knee_radius: nominal.knee_radius,
        body_corner_radius: nominal.body_corner_radius,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;

    #[test]
    fn samples_stay_in_bounds() {
        let mut rng = seed::rng(1, &[]);
        let space = DesignSpace::links_only();
        for _ in 0..10_000 {
            let d = sample_design(&mut rng, &space).unwrap();
            assert!((0.6..=1.4).contains(&d.thigh_scale));
            assert!((0.6..=1.4).contains(&d.shank_scale));
            assert!(d.gears.is_none());
        }
    }

    #[test]
    fn degenerate_bounds_are_constant() {
        let mut rng = seed::rng(2, &[]);
        let space = DesignSpace::new(vec![(1.0, 1.0); 2]).unwrap();
        for _ in 0..100 {
            assert_eq!(sample_design(&mut rng, &space).unwrap(), DesignParams::links(1.0, 1.0));
        }
    }

    #[test]
    fn sample_mean_matches_uniform_mean() {
        let mut rng = seed::rng(3, &[]);
        let space = DesignSpace::links_only();
        let n = 100_000;
        let (mut st, mut ss) = (0.0, 0.0);
        for _ in 0..n {
            let d = sample_design(&mut rng, &space).unwrap();
            st += d.thigh_scale;
            ss += d.shank_scale;
        }
        let oracle = (0.6 + 1.4) / 2.0;
        assert!((st / n as f64 - oracle).abs() < 0.01);
        assert!((ss / n as f64 - oracle).abs() < 0.01);
    }

    #[test]
    fn inverted_bounds_are_rejected() {
        let space = DesignSpace { bounds: vec![(1.4, 0.6), (0.6, 1.4)] };
        let mut rng = seed::rng(0, &[]);
        assert!(sample_design(&mut rng, &space).is_err());
        assert!(DesignSpace::new(vec![(0.6, 1.4); 3]).is_err());
    }

    #[test]
    fn identity_scaling_reproduces_nominal() {
        let nominal = NominalSpec::default();
        let m = build_robot(&DesignParams::links(1.0, 1.0), &nominal);
        assert_eq!(m.thigh.length, nominal.thigh_length);
        assert_eq!(m.shank.length, nominal.shank_length);
        assert_eq!(m.thigh.mass, nominal.thigh_mass);
        assert_eq!(m.shank.mass, nominal.shank_mass);
        assert_eq!(m.body_mass, nominal.body_mass);
        assert_eq!(m.joints[0].actuator.gear, nominal.hip_gear);
        assert_eq!(m.joints[1].actuator.gear, nominal.knee_gear);
    }

    #[test]
    fn extreme_scales() {
        let nominal = NominalSpec::default();
        let m = build_robot(&DesignParams::links(0.6, 1.4), &nominal);
        assert!((m.thigh.length - 0.21).abs() < 1e-15);
        assert!((m.shank.length - 0.49).abs() < 1e-15);
        assert!((m.thigh.mass - 0.6 * nominal.thigh_mass).abs() < 1e-15);
        assert!((m.shank.mass - 1.4 * nominal.shank_mass).abs() < 1e-15);
        assert!((m.thigh.inertia - m.thigh.mass * 0.21 * 0.21 / 12.0).abs() < 1e-15);
        assert_eq!(m.thigh.com_offset, 0.5 * m.thigh.length);
    }

    #[test]
    fn nominal_gears_match_two_d_mode() {
        let nominal = NominalSpec::default();
        let two = build_robot(&DesignParams::links(1.0, 1.0), &nominal);
        let four = build_robot(&DesignParams::with_gears(1.0, 1.0, 5.6, 8.0), &nominal);
        for j in 0..4 {
            assert_eq!(two.joints[j].torque_limit(), four.joints[j].torque_limit());
            assert_eq!(two.joints[j].speed_limit(), four.joints[j].speed_limit());
        }
        assert_eq!(two, four);
    }

    #[test]
    fn feature_examples() {
        let space = DesignSpace::links_only();
        let f = |t, s| design_to_features(&DesignParams::links(t, s), &space);
        assert_eq!(f(0.6, 0.6), vec![-1.0, -1.0]);
        let mid = f(1.0, 1.0);
        assert!(mid.iter().all(|v| v.abs() < 1e-15));
        assert_eq!(f(1.4, 0.6), vec![1.0, -1.0]);
    }

    proptest! {
        #[test]
        fn build_is_pure_and_order_preserving(a in 0.6f64..=1.4, b in 0.6f64..=1.4, s in 0.6f64..=1.4) {
            let nominal = NominalSpec::default();
            let d1 = DesignParams::links(a, s);
            prop_assert_eq!(build_robot(&d1, &nominal), build_robot(&d1, &nominal));
            if a < b {
                let m1 = build_robot(&d1, &nominal);
                let m2 = build_robot(&DesignParams::links(b, s), &nominal);
                prop_assert!(m1.thigh.length < m2.thigh.length);
                prop_assert!(m1.thigh.mass < m2.thigh.mass);
            }
        }

        #[test]
        fn features_round_trip(t in 0.6f64..=1.4, s in 0.6f64..=1.4, h in 2.8f64..=12.0, k in 2.8f64..=12.0) {
            let space = DesignSpace::with_gears();
            let d = DesignParams::with_gears(t, s, h, k);
            let back = features_to_design(&design_to_features(&d, &space), &space).unwrap();
            for (x, y) in d.to_vec().iter().zip(back.to_vec()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
