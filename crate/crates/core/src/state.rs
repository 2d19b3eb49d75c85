//! Shared state vocabulary and robot constants.
//!
//! Frames: one world frame with x forward and z up, gravity along -z. The torso
//! frame is attached at the CoM and rotated by the pitch angle `theta`
//! (counter-clockwise positive in the x-z plane, so positive pitch lifts the
//! nose). Planar cross products use `wedge(r, f) = r.x * f.z - r.z * f.x`.
//!
//! Joint angles: the hip angle is measured from the torso-frame downward
//! vertical, positive forward; the knee angle is the relative shank angle,
//! negative when flexed.

use core::f64::consts::FRAC_PI_2;

use nalgebra::Vector2;
use thiserror::Error;

use crate::kinematics::{LegGeometry, UpsModel};

pub type Vec2 = Vector2<f64>;

/// Planar cross product `r.x * f.z - r.z * f.x`.
#[inline]
pub fn wedge(r: &Vec2, f: &Vec2) -> f64 {
    r.x * f.y - r.y * f.x
}

/// Full planar robot state.
///
/// Vectors are `(x, z)` pairs; `q` is `(hip, knee)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RobotState {
    pub p_c: Vec2,
    pub v_c: Vec2,
    pub theta: f64,
    pub theta_dot: f64,
    pub q: Vec2,
    pub qdot: Vec2,
    pub contact: bool,
}

impl RobotState {
    pub fn is_finite(&self) -> bool {
        self.p_c.iter().all(|v| v.is_finite())
            && self.v_c.iter().all(|v| v.is_finite())
            && self.theta.is_finite()
            && self.theta_dot.is_finite()
            && self.q.iter().all(|v| v.is_finite())
            && self.qdot.iter().all(|v| v.is_finite())
    }

    /// Joint angles inside the limits widened by `margin` radians.
    pub fn joints_within(&self, constants: &RobotConstants, margin: f64) -> bool {
        (0..2).all(|i| {
            self.q[i] >= constants.q_min[i] - margin && self.q[i] <= constants.q_max[i] + margin
        })
    }

    /// Torso kinetic plus gravitational potential energy.
    pub fn torso_energy(&self, constants: &RobotConstants) -> f64 {
        0.5 * constants.mass * self.v_c.norm_squared()
            + 0.5 * constants.inertia * self.theta_dot * self.theta_dot
            - constants.mass * constants.gravity.dot(&self.p_c)
    }
}

/// Physical constants of the robot and the SLIP template.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotConstants {
    pub mass: f64,
    pub inertia: f64,
    /// SLIP template spring constant (N/m).
    pub slip_stiffness: f64,
    /// SLIP rest length (m).
    pub rest_length: f64,
    pub friction: f64,
    pub q_min: Vec2,
    pub q_max: Vec2,
    pub tau_max: Vec2,
    pub gravity: Vec2,
}

impl Default for RobotConstants {
    fn default() -> Self {
        Self {
            mass: 2.5,
            inertia: 0.05,
            slip_stiffness: 1500.0,
            rest_length: 0.32,
            friction: 0.7,
            q_min: Vec2::new(0.0, -2.45),
            q_max: Vec2::new(FRAC_PI_2, -0.85),
            tau_max: Vec2::new(25.0, 25.0),
            gravity: Vec2::new(0.0, -9.81),
        }
    }
}

impl RobotConstants {
    /// Magnitude of gravity.
    pub fn g(&self) -> f64 {
        self.gravity.norm()
    }

    pub fn weight(&self) -> f64 {
        self.mass * self.g()
    }

    /// Clamp a joint-torque vector to the actuator limits.
    pub fn clamp_torque(&self, tau: Vec2) -> Vec2 {
        Vec2::new(
            tau.x.clamp(-self.tau_max.x, self.tau_max.x),
            tau.y.clamp(-self.tau_max.y, self.tau_max.y),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{name} = {value} is out of range ({reason})")]
    OutOfRange {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("inconsistent configuration: {0}")]
    Inconsistent(&'static str),
}

/// Partial override block; `None` keeps the default constant.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ConstantOverrides {
    pub mass: Option<f64>,
    pub inertia: Option<f64>,
    pub slip_stiffness: Option<f64>,
    pub rest_length: Option<f64>,
    pub friction: Option<f64>,
    pub q_min: Option<[f64; 2]>,
    pub q_max: Option<[f64; 2]>,
    pub tau_max: Option<[f64; 2]>,
    pub gravity: Option<f64>,
}

fn positive(name: &'static str, value: f64) -> Result<f64, ConfigError> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(ConfigError::OutOfRange {
            name,
            value,
            reason: "must be finite and > 0",
        })
    }
}

/// Range-check overrides against the defaults and the leg geometry.
pub fn validate_constants(
    overrides: &ConstantOverrides,
    leg: &LegGeometry,
    ups: &UpsModel,
) -> Result<RobotConstants, ConfigError> {
    let d = RobotConstants::default();
    let mass = positive("mass", overrides.mass.unwrap_or(d.mass))?;
    let inertia = positive("inertia", overrides.inertia.unwrap_or(d.inertia))?;
    let slip_stiffness = positive(
        "slip_stiffness",
        overrides.slip_stiffness.unwrap_or(d.slip_stiffness),
    )?;
    let rest_length = positive("rest_length", overrides.rest_length.unwrap_or(d.rest_length))?;
    let friction = positive("friction", overrides.friction.unwrap_or(d.friction))?;
    let g = positive("gravity", overrides.gravity.unwrap_or(d.g()))?;
    let q_min = overrides.q_min.map(Vec2::from).unwrap_or(d.q_min);
    let q_max = overrides.q_max.map(Vec2::from).unwrap_or(d.q_max);
    let tau_max = overrides.tau_max.map(Vec2::from).unwrap_or(d.tau_max);
    for i in 0..2 {
        positive("tau_max", tau_max[i])?;
        if !(q_min[i].is_finite() && q_max[i].is_finite()) || q_min[i] >= q_max[i] {
            return Err(ConfigError::OutOfRange {
                name: "q_min",
                value: q_min[i],
                reason: "joint lower limit must be below the upper limit",
            });
        }
    }
    positive("thigh_length", leg.thigh_length)?;
    positive("shank_length", leg.shank_length)?;
    if leg.thigh_length + leg.shank_length < rest_length {
        return Err(ConfigError::Inconsistent(
            "rest_length exceeds the leg reach (thigh_length + shank_length)",
        ));
    }
    if !(ups.stiffness.is_finite() && ups.stiffness >= 0.0) {
        return Err(ConfigError::OutOfRange {
            name: "ups_stiffness",
            value: ups.stiffness,
            reason: "must be finite and >= 0",
        });
    }
    if !ups.engagement_angle.is_finite() {
        return Err(ConfigError::OutOfRange {
            name: "ups_engagement_angle",
            value: ups.engagement_angle,
            reason: "must be finite",
        });
    }
    Ok(RobotConstants {
        mass,
        inertia,
        slip_stiffness,
        rest_length,
        friction,
        q_min,
        q_max,
        tau_max,
        gravity: Vec2::new(0.0, -g),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_overrides_give_table_values() {
        let c = validate_constants(
            &ConstantOverrides::default(),
            &LegGeometry::default(),
            &UpsModel::default(),
        )
        .unwrap();
        assert_eq!(c.mass, 2.5);
        assert_eq!(c.inertia, 0.05);
        assert_eq!(c.slip_stiffness, 1500.0);
        assert_eq!(c.rest_length, 0.32);
        assert_eq!(c.friction, 0.7);
        assert_eq!(c.q_min, Vec2::new(0.0, -2.45));
        assert_eq!(c.q_max, Vec2::new(FRAC_PI_2, -0.85));
        assert_eq!(c.tau_max, Vec2::new(25.0, 25.0));
        assert_eq!(c.gravity, Vec2::new(0.0, -9.81));
    }

    #[test]
    fn rest_length_beyond_reach_is_rejected() {
        let o = ConstantOverrides {
            rest_length: Some(0.5),
            ..Default::default()
        };
        let err = validate_constants(&o, &LegGeometry::default(), &UpsModel::default());
        assert!(matches!(err, Err(ConfigError::Inconsistent(_))));
    }

    #[test]
    fn negative_friction_is_rejected() {
        let o = ConstantOverrides {
            friction: Some(-0.1),
            ..Default::default()
        };
        let err = validate_constants(&o, &LegGeometry::default(), &UpsModel::default());
        assert!(matches!(
            err,
            Err(ConfigError::OutOfRange {
                name: "friction",
                ..
            })
        ));
    }

    #[test]
    fn wedge_sign() {
        // Foot ahead of the CoM pushing straight up pitches the nose up.
        assert_eq!(wedge(&Vec2::new(0.1, -0.3), &Vec2::new(0.0, 10.0)), 1.0);
    }
}
