//! Planar articulated bodies in generalized coordinates.
//!
//! Every point of interest is written as
//! `p(q) = [q_x, q_z] + Σ_k R(Σ_{j ∈ S_k} q_j) · v_k`, i.e. an optional base
//! translation plus a chain of rotated link vectors. Positions, Jacobians and
//! velocity-product accelerations follow in closed form, which gives the
//! exact joint-space mass matrix `M = Σ_b m_b J_bᵀJ_b + I_b s_bᵀs_b` and bias
//! vector `Σ_b m_b J_bᵀ (J̇_b q̇)` (Kane's equations).

use nalgebra::{SMatrix, SVector};

pub type Vec2 = [f64; 2];

const MAX_TERMS: usize = 3;

/// Rotated vector `R(Σ_{j∈mask} q_j) · v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term {
    pub mask: u16,
    pub v: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    /// Whether coordinates 0 and 1 are the base translation.
    pub floating: bool,
    terms: [Term; MAX_TERMS],
    len: usize,
}

impl Point {
    pub fn new(floating: bool, terms: &[Term]) -> Self {
        assert!(terms.len() <= MAX_TERMS);
        let mut t = [Term { mask: 0, v: [0.0; 2] }; MAX_TERMS];
        t[..terms.len()].copy_from_slice(terms);
        Self { floating, terms: t, len: terms.len() }
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms[..self.len]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Body {
    pub mass: f64,
    pub inertia: f64,
    /// Coordinates whose sum is this body's absolute angle.
    pub angle_mask: u16,
    pub com: Point,
}

#[inline]
fn masked_sum<const N: usize>(mask: u16, x: &SVector<f64, N>) -> f64 {
    let mut s = 0.0;
    for j in 0..N {
        if mask & (1 << j) != 0 {
            s += x[j];
        }
    }
    s
}

#[inline]
fn rotate(angle: f64, v: Vec2) -> Vec2 {
    let (s, c) = angle.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

pub fn position<const N: usize>(p: &Point, q: &SVector<f64, N>) -> Vec2 {
    let mut out = if p.floating { [q[0], q[1]] } else { [0.0, 0.0] };
    for t in p.terms() {
        let r = rotate(masked_sum(t.mask, q), t.v);
        out[0] += r[0];
        out[1] += r[1];
    }
    out
}

/// 2×N Jacobian of the point.
pub fn jacobian<const N: usize>(p: &Point, q: &SVector<f64, N>) -> SMatrix<f64, 2, N> {
    let mut jac = SMatrix::<f64, 2, N>::zeros();
    if p.floating {
        jac[(0, 0)] = 1.0;
        jac[(1, 1)] = 1.0;
    }
    for t in p.terms() {
        let r = rotate(masked_sum(t.mask, q), t.v);
        for j in 0..N {
            if t.mask & (1 << j) != 0 {
                jac[(0, j)] -= r[1];
                jac[(1, j)] += r[0];
            }
        }
    }
    jac
}

/// Acceleration of the point when `q̈ = 0`, i.e. `J̇ q̇`.
pub fn velocity_product<const N: usize>(p: &Point, q: &SVector<f64, N>, qd: &SVector<f64, N>) -> Vec2 {
    let mut out = [0.0, 0.0];
    for t in p.terms() {
        let r = rotate(masked_sum(t.mask, q), t.v);
        let w = masked_sum(t.mask, qd);
        out[0] -= w * w * r[0];
        out[1] -= w * w * r[1];
    }
    out
}

/// Rigid bodies over N generalized coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Multibody<const N: usize> {
    pub bodies: Vec<Body>,
    pub gravity: f64,
}

/// Terms of the equations of motion `M q̈ = generalized_force`.
pub struct Dynamics<const N: usize> {
    pub mass: SMatrix<f64, N, N>,
    /// Gravity minus velocity-product terms, before joint or contact forces.
    pub force: SVector<f64, N>,
}

impl<const N: usize> Multibody<N> {
    pub fn dynamics(&self, q: &SVector<f64, N>, qd: &SVector<f64, N>) -> Dynamics<N> {
        let mut mass = SMatrix::<f64, N, N>::zeros();
        let mut force = SVector::<f64, N>::zeros();
        for b in &self.bodies {
            let jac = jacobian(&b.com, q);
            let vp = velocity_product(&b.com, q, qd);
            mass += b.mass * jac.transpose() * jac;
            for i in 0..N {
                if b.angle_mask & (1 << i) == 0 {
                    continue;
                }
                for j in 0..N {
                    if b.angle_mask & (1 << j) != 0 {
                        mass[(i, j)] += b.inertia;
                    }
                }
            }
            for j in 0..N {
                force[j] += b.mass * (jac[(0, j)] * (-vp[0]) + jac[(1, j)] * (-self.gravity - vp[1]));
            }
        }
        Dynamics { mass, force }
    }

    pub fn kinetic_energy(&self, q: &SVector<f64, N>, qd: &SVector<f64, N>) -> f64 {
        let m = self.dynamics(q, qd).mass;
        0.5 * (qd.transpose() * m * qd)[(0, 0)]
    }

    pub fn potential_energy(&self, q: &SVector<f64, N>) -> f64 {
        self.bodies.iter().map(|b| b.mass * self.gravity * position(&b.com, q)[1]).sum()
    }
}

/// A single uniform rod of length `length` hanging from a fixed pivot.
pub fn pendulum(length: f64, mass: f64, gravity: f64) -> Multibody<1> {
    Multibody {
        bodies: vec![Body {
            mass,
            inertia: mass * length * length / 12.0,
            angle_mask: 1,
            com: Point::new(false, &[Term { mask: 1, v: [0.0, -0.5 * length] }]),
        }],
        gravity,
    }
}

/// One semi-implicit Euler step of an unconstrained multibody with
/// generalized force `extra` (joint torques, contact forces).
pub fn integrate<const N: usize>(
    dynamics: &Dynamics<N>,
    extra: &SVector<f64, N>,
    q: &mut SVector<f64, N>,
    qd: &mut SVector<f64, N>,
    dt: f64,
) -> Option<()> {
    let chol = dynamics.mass.cholesky()?;
    let qdd = chol.solve(&(dynamics.force + extra));
    *qd += qdd * dt;
    *q += *qd * dt;
    Some(())
}

/// Largest relative deviation of the total energy of a freely swinging
/// pendulum released from `angle`, over `duration` seconds of semi-implicit
/// Euler steps. Energy is measured above the rest position.
pub fn pendulum_energy_drift(mb: &Multibody<1>, angle: f64, dt: f64, duration: f64) -> f64 {
    let mut q = SVector::<f64, 1>::new(angle);
    let mut qd = SVector::<f64, 1>::zeros();
    let rest = mb.potential_energy(&SVector::<f64, 1>::zeros());
    let energy = |q: &SVector<f64, 1>, qd: &SVector<f64, 1>| mb.kinetic_energy(q, qd) + mb.potential_energy(q) - rest;
    let e0 = energy(&q, &qd);
    let mut worst: f64 = 0.0;
    for _ in 0..(duration / dt).round() as usize {
        let d = mb.dynamics(&q, &qd);
        integrate(&d, &SVector::<f64, 1>::zeros(), &mut q, &mut qd, dt).expect("pendulum mass matrix is SPD");
        worst = worst.max((energy(&q, &qd) - e0).abs() / e0);
    }
    worst
}
