//! Planar dynamics of the two-leg sagittal quadruped.
//!
//! Generalized coordinates are `[x, z, pitch, front hip, front knee, hind hip,
//! hind knee]`. Joint angles are relative; a link's absolute angle is the sum
//! of the pitch and the joint angles above it, measured from straight down
//! and positive counter-clockwise (a positive hip angle swings the foot
//! forward).

pub mod actuator;
pub mod contact;
pub mod multibody;

use nalgebra::SVector;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::morphology::{RobotModel, FRONT, HIND};
use crate::terrain::Heightfield;
use contact::{contact_force, ContactParams};
use multibody::{jacobian, position, Body, Multibody, Point, Term, Vec2};

pub const DOF: usize = 7;
pub type Coords = SVector<f64, DOF>;

const X: usize = 0;
const Z: usize = 1;
const PITCH: usize = 2;
/// Coordinate index of joint `j` (0..4).
const fn joint_coord(j: usize) -> usize {
    3 + j
}

/// Contacts closer than this count as touching.
pub const CONTACT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimParams {
    pub gravity: f64,
    /// Physics step (s).
    pub dt: f64,
    /// Physics steps per control step.
    pub substeps: usize,
    pub contact: ContactParams,
}

impl Default for SimParams {
    fn default() -> Self {
        Self { gravity: 9.81, dt: 2.5e-3, substeps: 8, contact: ContactParams::default() }
    }
}

impl SimParams {
    pub fn control_dt(&self) -> f64 {
        self.dt * self.substeps as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) || self.substeps == 0 {
            return Err(config_err("sim.dt must be > 0 and sim.substeps >= 1"));
        }
        if !self.gravity.is_finite() || self.gravity < 0.0 {
            return Err(config_err("sim.gravity must be finite and >= 0"));
        }
        let c = &self.contact;
        if [c.normal_stiffness, c.normal_damping, c.tangential_gain].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(config_err("contact constants must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub q: [f64; DOF],
    pub qd: [f64; DOF],
    pub foot_contact: [bool; 2],
    pub nonfoot_contacts: u32,
    /// Torques applied during the last physics step.
    pub torques: [f64; 4],
}

impl SimState {
    pub fn base_x(&self) -> f64 {
        self.q[X]
    }
    pub fn base_z(&self) -> f64 {
        self.q[Z]
    }
    pub fn pitch(&self) -> f64 {
        self.q[PITCH]
    }
    pub fn vx(&self) -> f64 {
        self.qd[X]
    }
    pub fn vz(&self) -> f64 {
        self.qd[Z]
    }
    pub fn pitch_rate(&self) -> f64 {
        self.qd[PITCH]
    }
    pub fn joint_angles(&self) -> [f64; 4] {
        [self.q[3], self.q[4], self.q[5], self.q[6]]
    }
    pub fn joint_velocities(&self) -> [f64; 4] {
        [self.qd[3], self.qd[4], self.qd[5], self.qd[6]]
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.qd).chain(&self.torques).all(|v| v.is_finite())
    }

    fn coords(&self) -> (Coords, Coords) {
        (Coords::from_column_slice(&self.q), Coords::from_column_slice(&self.qd))
    }
}

/// Named contact points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContactPoint {
    Foot(usize),
    Knee(usize),
    BodyCorner(usize),
}

impl ContactPoint {
    pub const ALL: [ContactPoint; 6] = [
        ContactPoint::Foot(FRONT),
        ContactPoint::Foot(HIND),
        ContactPoint::Knee(FRONT),
        ContactPoint::Knee(HIND),
        ContactPoint::BodyCorner(FRONT),
        ContactPoint::BodyCorner(HIND),
    ];

    pub fn is_foot(&self) -> bool {
        matches!(self, ContactPoint::Foot(_))
    }
}

const PITCH_MASK: u16 = 1 << PITCH;

fn thigh_mask(leg: usize) -> u16 {
    PITCH_MASK | 1 << joint_coord(2 * leg)
}

fn shank_mask(leg: usize) -> u16 {
    thigh_mask(leg) | 1 << joint_coord(2 * leg + 1)
}

/// The multibody and contact geometry for one robot model.
#[derive(Debug, Clone)]
pub struct Quadruped {
    pub model: RobotModel,
    body: Multibody<DOF>,
    points: Vec<(ContactPoint, Point, f64)>,
}

impl Quadruped {
    pub fn new(model: &RobotModel, gravity: f64) -> Self {
        let hip = |leg: usize| Term { mask: PITCH_MASK, v: [model.hip_offset(leg), 0.0] };
        let thigh = |leg: usize, len: f64| Term { mask: thigh_mask(leg), v: [0.0, -len] };
        let shank = |leg: usize, len: f64| Term { mask: shank_mask(leg), v: [0.0, -len] };

        let mut bodies = vec![Body {
            mass: model.body_mass,
            inertia: model.body_inertia,
            angle_mask: PITCH_MASK,
            com: Point::new(true, &[]),
        }];
        let mut points = Vec::with_capacity(6);
        for leg in [FRONT, HIND] {
            bodies.push(Body {
                mass: model.thigh.mass,
                inertia: model.thigh.inertia,
                angle_mask: thigh_mask(leg),
                com: Point::new(true, &[hip(leg), thigh(leg, model.thigh.com_offset)]),
            });
            bodies.push(Body {
                mass: model.shank.mass,
                inertia: model.shank.inertia,
                angle_mask: shank_mask(leg),
                com: Point::new(
                    true,
                    &[hip(leg), thigh(leg, model.thigh.length), shank(leg, model.shank.com_offset)],
                ),
            });
        }
        for cp in ContactPoint::ALL {
            let (point, radius) = match cp {
                ContactPoint::Foot(leg) => (
                    Point::new(true, &[hip(leg), thigh(leg, model.thigh.length), shank(leg, model.shank.length)]),
                    model.foot_radius,
                ),
                ContactPoint::Knee(leg) => {
                    (Point::new(true, &[hip(leg), thigh(leg, model.thigh.length)]), model.knee_radius)
                }
                ContactPoint::BodyCorner(leg) => (
                    Point::new(true, &[Term { mask: PITCH_MASK, v: [model.hip_offset(leg), -0.5 * model.body_height] }]),
                    model.body_corner_radius,
                ),
            };
            points.push((cp, point, radius));
        }
        Self { model: model.clone(), body: Multibody { bodies, gravity }, points }
    }

    pub fn multibody(&self) -> &Multibody<DOF> {
        &self.body
    }

    pub fn point_position(&self, state: &SimState, which: ContactPoint) -> Vec2 {
        let (q, _) = state.coords();
        let (_, p, _) = self.points.iter().find(|(c, _, _)| *c == which).expect("known contact point");
        position(p, &q)
    }

    pub fn foot_position(&self, state: &SimState, leg: usize) -> Vec2 {
        self.point_position(state, ContactPoint::Foot(leg))
    }

    /// Signed gap between the point's sphere and the terrain, measured along
    /// the terrain normal (positive when separated).
    fn gap(field: &Heightfield, p: Vec2, radius: f64) -> (f64, Vec2, Vec2) {
        let slope = field.slope_at(p[0]);
        let inv = 1.0 / (1.0 + slope * slope).sqrt();
        let normal = [-slope * inv, inv];
        let tangent = [inv, slope * inv];
        ((p[1] - radius - field.height_at(p[0])) * inv, normal, tangent)
    }

    /// Vertical clearance of the foot sphere above the terrain directly below.
    pub fn foot_clearance(&self, state: &SimState, field: &Heightfield, leg: usize) -> f64 {
        let p = self.foot_position(state, leg);
        p[1] - self.model.foot_radius - field.height_at(p[0])
    }

    /// Recompute contact flags from the penetration test at `state`.
    pub fn update_contacts(&self, state: &mut SimState, field: &Heightfield) {
        let (q, _) = state.coords();
        state.foot_contact = [false; 2];
        state.nonfoot_contacts = 0;
        for (cp, p, r) in &self.points {
            let (gap, _, _) = Self::gap(field, position(p, &q), *r);
            if gap <= CONTACT_TOLERANCE {
                match cp {
                    ContactPoint::Foot(leg) => state.foot_contact[*leg] = true,
                    _ => state.nonfoot_contacts += 1,
                }
            }
        }
    }

    /// Raise the base until no contact sphere penetrates the terrain, then
    /// lower it so the lowest sphere touches.
    pub fn seat_on_terrain(&self, state: &mut SimState, field: &Heightfield) {
        let (q, _) = state.coords();
        let lift = self
            .points
            .iter()
            .map(|(_, p, r)| {
                let pos = position(p, &q);
                field.height_at(pos[0]) + r - pos[1]
            })
            .fold(f64::NEG_INFINITY, f64::max);
        state.q[Z] += lift;
        self.update_contacts(state, field);
    }

    /// Advance one physics step with the given (already limited) joint torques.
    pub fn step(
        &self,
        state: &SimState,
        torques: &[f64; 4],
        field: &Heightfield,
        params: &SimParams,
    ) -> Result<SimState> {
        let dt = params.dt;
        let (mut q, mut qd) = state.coords();
        let dynamics = self.body.dynamics(&q, &qd);
        let chol = dynamics
            .mass
            .cholesky()
            .ok_or_else(|| Error::Diverged("mass matrix lost positive definiteness".into()))?;

        let mut generalized = Coords::zeros();
        for (j, tau) in torques.iter().enumerate() {
            generalized[joint_coord(j)] = *tau;
        }

        let cp = &params.contact;
        for (_, point, radius) in &self.points {
            let pos = position(point, &q);
            let (gap, n, t) = Self::gap(field, pos, *radius);
            if gap >= 0.0 {
                continue;
            }
            let jac = jacobian(point, &q);
            let v = jac * qd;
            let jn = jac.transpose() * nalgebra::Vector2::new(n[0], n[1]);
            let jt = jac.transpose() * nalgebra::Vector2::new(t[0], t[1]);
            let vn = n[0] * v[0] + n[1] * v[1];
            let vt = t[0] * v[0] + t[1] * v[1];
            // Velocities seen by the damping terms are taken at the end of the
            // step (implicit in the point's effective mass).
            let inv_mn = jn.dot(&chol.solve(&jn));
            let inv_mt = jt.dot(&chol.solve(&jt));
            let vn_eff = vn / (1.0 + dt * cp.normal_damping * inv_mn);
            let vt_eff = vt / (1.0 + dt * cp.tangential_gain * inv_mt);
            let (fn_, ft) = contact_force(-gap, vt_eff, vn_eff, field.friction, cp);
            generalized += jn * fn_ + jt * ft;
        }

        let qdd = chol.solve(&(dynamics.force + generalized));
        qd += qdd * dt;
        q += qd * dt;

        let mut next = SimState {
            q: q.into(),
            qd: qd.into(),
            foot_contact: [false; 2],
            nonfoot_contacts: 0,
            torques: *torques,
        };
        if !next.is_finite() || next.qd.iter().any(|v| v.abs() > 1e4) {
            return Err(Error::Diverged(format!("state left the finite range: {:?}", next.q)));
        }
        self.update_contacts(&mut next, field);
        Ok(next)
    }

    /// Total mechanical energy (kinetic + gravitational).
    pub fn energy(&self, state: &SimState) -> f64 {
        let (q, qd) = state.coords();
        self.body.kinetic_energy(&q, &qd) + self.body.potential_energy(&q)
    }
}

/// One physics step for `model`. Builds the multibody on every call; use
/// [`Quadruped::step`] in loops.
pub fn step(
    state: &SimState,
    joint_torques: &[f64; 4],
    model: &RobotModel,
    field: &Heightfield,
    params: &SimParams,
) -> Result<SimState> {
    Quadruped::new(model, params.gravity).step(state, joint_torques, field, params)
}

/// Nominal standing pose (relative joint angles). Knees point toward the body
/// center, front and hind legs mirror each other.
pub fn standing_pose(crouch: f64) -> [f64; 4] {
    [-crouch, 2.0 * crouch, crouch, -2.0 * crouch]
}

pub fn state_at_pose(joints: [f64; 4]) -> SimState {
    let mut q = [0.0; DOF];
    q[3..].copy_from_slice(&joints);
    SimState { q, qd: [0.0; DOF], foot_contact: [false; 2], nonfoot_contacts: 0, torques: [0.0; 4] }
}
