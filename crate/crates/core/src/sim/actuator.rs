//! Gear-dependent torque/speed envelope of a joint actuator.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuatorSpec {
    pub motor_stall_torque: f64,
    pub motor_no_load_speed: f64,
    pub gear: f64,
}

impl ActuatorSpec {
    /// Joint-side stall torque `g·τ_m`.
    pub fn stall_torque(&self) -> f64 {
        self.gear * self.motor_stall_torque
    }

    /// Joint-side no-load speed `ω_m / g`.
    pub fn no_load_speed(&self) -> f64 {
        self.motor_no_load_speed / self.gear
    }
}

/// Clamp a commanded joint torque to the linear torque-speed envelope.
///
/// Torque that drives the joint in its direction of motion is derated
/// linearly to zero at the no-load speed; braking torque (opposing the
/// motion) is always available up to the stall torque.
pub fn actuator_torque(commanded: f64, joint_velocity: f64, spec: &ActuatorSpec) -> f64 {
    let stall = spec.stall_torque();
    let limit = if commanded * joint_velocity > 0.0 {
        stall * (1.0 - joint_velocity.abs() / spec.no_load_speed()).max(0.0)
    } else {
        stall
    };
    commanded.clamp(-limit, limit)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(gear: f64) -> ActuatorSpec {
        ActuatorSpec { motor_stall_torque: 10.0, motor_no_load_speed: 120.0, gear }
    }

    #[test]
    fn zero_command_is_zero() {
        assert_eq!(actuator_torque(0.0, 3.0, &spec(8.0)), 0.0);
    }

    #[test]
    fn stall_clamp() {
        let s = spec(8.0);
        assert_eq!(actuator_torque(1e3, 0.0, &s), 80.0);
        assert_eq!(actuator_torque(-1e3, 0.0, &s), -80.0);
        assert_eq!(actuator_torque(12.5, 0.0, &s), 12.5);
    }

    #[test]
    fn gear_doubling() {
        let (a, b) = (spec(4.0), spec(8.0));
        assert_eq!(b.stall_torque(), 2.0 * a.stall_torque());
        assert_eq!(b.no_load_speed(), 0.5 * a.no_load_speed());
        // Formula evaluated at the same fraction of no-load speed.
        let ta = actuator_torque(1e3, 0.5 * a.no_load_speed(), &a);
        let tb = actuator_torque(1e3, 0.5 * b.no_load_speed(), &b);
        assert!((tb - 2.0 * ta).abs() < 1e-12);
    }

    #[test]
    fn derating_and_braking() {
        let s = spec(8.0); // stall 80, no-load 15 rad/s
        assert!((actuator_torque(1e3, 7.5, &s) - 40.0).abs() < 1e-12);
        assert_eq!(actuator_torque(1e3, 20.0, &s), 0.0);
        assert_eq!(actuator_torque(-1e3, 20.0, &s), -80.0);
        assert!((actuator_torque(-1e3, -7.5, &s) + 40.0).abs() < 1e-12);
    }
}
