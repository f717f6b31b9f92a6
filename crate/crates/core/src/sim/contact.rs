//! Penalty contact with regularized Coulomb friction.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContactParams {
    /// Normal stiffness (N/m).
    pub normal_stiffness: f64,
    /// Normal damping, active only while approaching (N·s/m).
    pub normal_damping: f64,
    /// Tangential viscous gain before the Coulomb cap (N·s/m).
    pub tangential_gain: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        Self { normal_stiffness: 4e4, normal_damping: 400.0, tangential_gain: 2e3 }
    }
}

/// Returns `(normal, tangential)` force for one contact point.
pub fn contact_force(
    penetration: f64,
    tangential_velocity: f64,
    normal_velocity: f64,
    friction: f64,
    params: &ContactParams,
) -> (f64, f64) {
    if penetration <= 0.0 {
        return (0.0, 0.0);
    }
    let normal = (params.normal_stiffness * penetration + params.normal_damping * (-normal_velocity).max(0.0)).max(0.0);
    let cap = friction * normal;
    let tangential = -(params.tangential_gain * tangential_velocity).clamp(-cap, cap);
    (normal, tangential)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn separated_is_free() {
        let p = ContactParams::default();
        assert_eq!(contact_force(0.0, 0.3, 1.0, 0.8, &p), (0.0, 0.0));
        assert_eq!(contact_force(-0.01, 0.3, -1.0, 0.8, &p), (0.0, 0.0));
    }

    #[test]
    fn static_spring() {
        let p = ContactParams::default();
        let (n, t) = contact_force(0.005, 0.0, 0.0, 0.8, &p);
        assert_eq!(n, p.normal_stiffness * 0.005);
        assert_eq!(t, 0.0);
    }

    #[test]
    fn separating_velocity_adds_no_damping() {
        let p = ContactParams::default();
        let (n, _) = contact_force(0.005, 0.0, 2.0, 0.8, &p);
        assert_eq!(n, p.normal_stiffness * 0.005);
    }

    proptest! {
        #[test]
        fn friction_cone(pen in 0.0f64..0.05, vt in -10.0f64..10.0, vn in -10.0f64..10.0, mu in 0.0f64..2.0) {
            let p = ContactParams::default();
            let (n, t) = contact_force(pen, vt, vn, mu, &p);
            prop_assert!(n >= 0.0);
            prop_assert!(t.abs() <= mu * n + 1e-12);
            prop_assert!(t * vt <= 0.0);
        }
    }
}
