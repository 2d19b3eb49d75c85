//! Planar two-link leg kinematics and the unidirectional parallel spring.
//!
//! Generalized coordinates are ordered `[com_x, com_z, pitch, q_hip, q_knee]`.
//! The thigh direction in the torso frame is `(sin q_hip, -cos q_hip)` and the
//! shank direction is `(sin(q_hip + q_knee), -cos(q_hip + q_knee))`, so a flexed
//! knee (`q_knee < 0`) folds the shank back under the hip.

use nalgebra::{Matrix2, SMatrix};
#[allow(unused_imports)] // float math lives in std when it is linked
use num_traits::Float;
use thiserror::Error;

use crate::state::Vec2;

pub type Matrix2x5 = SMatrix<f64, 2, 5>;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum KinematicsError {
    #[error("foot target out of workspace: distance {requested} m, reachable [{min_reach}, {max_reach}] m")]
    OutOfWorkspace {
        requested: f64,
        min_reach: f64,
        max_reach: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegGeometry {
    pub thigh_length: f64,
    pub shank_length: f64,
    /// Hip position in the torso frame relative to the CoM.
    pub hip_offset_body: Vec2,
}

impl Default for LegGeometry {
    fn default() -> Self {
        Self {
            thigh_length: 0.20,
            shank_length: 0.20,
            hip_offset_body: Vec2::zeros(),
        }
    }
}

/// Rotation of torso-frame vectors into the world frame.
#[inline]
pub fn rotation(pitch: f64) -> Matrix2<f64> {
    let (s, c) = pitch.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// Derivative of [`rotation`] with respect to pitch.
#[inline]
pub fn rotation_derivative(pitch: f64) -> Matrix2<f64> {
    let (s, c) = pitch.sin_cos();
    Matrix2::new(-s, -c, c, -s)
}

/// Selects the actuated-joint rows `[q_hip, q_knee]` of the generalized coordinates.
pub fn selection_matrix() -> Matrix2x5 {
    let mut s = Matrix2x5::zeros();
    s[(0, 3)] = 1.0;
    s[(1, 4)] = 1.0;
    s
}

impl LegGeometry {
    pub fn max_reach(&self) -> f64 {
        self.thigh_length + self.shank_length
    }

    pub fn min_reach(&self) -> f64 {
        (self.thigh_length - self.shank_length).abs()
    }

    /// Hip-to-foot vector in the torso frame.
    pub fn leg_chain(&self, q: &Vec2) -> Vec2 {
        let (s1, c1) = q.x.sin_cos();
        let (s12, c12) = (q.x + q.y).sin_cos();
        Vec2::new(
            self.thigh_length * s1 + self.shank_length * s12,
            -self.thigh_length * c1 - self.shank_length * c12,
        )
    }

    /// `d leg_chain / d q` in the torso frame (columns hip, knee).
    pub fn chain_jacobian(&self, q: &Vec2) -> Matrix2<f64> {
        let (s1, c1) = q.x.sin_cos();
        let (s12, c12) = (q.x + q.y).sin_cos();
        let (l1, l2) = (self.thigh_length, self.shank_length);
        Matrix2::new(l1 * c1 + l2 * c12, l2 * c12, l1 * s1 + l2 * s12, l2 * s12)
    }

    /// Second derivatives `d^2 leg_chain / (d q_i d q_j)`, indexed `[i][j]`.
    pub fn chain_hessian(&self, q: &Vec2) -> [[Vec2; 2]; 2] {
        let (s1, c1) = q.x.sin_cos();
        let (s12, c12) = (q.x + q.y).sin_cos();
        let (l1, l2) = (self.thigh_length, self.shank_length);
        let d11 = Vec2::new(-l1 * s1 - l2 * s12, l1 * c1 + l2 * c12);
        let d12 = Vec2::new(-l2 * s12, l2 * c12);
        [[d11, d12], [d12, d12]]
    }

    pub fn hip_world(&self, com: &Vec2, pitch: f64) -> Vec2 {
        com + rotation(pitch) * self.hip_offset_body
    }

    /// Foot position in the world frame.
    pub fn forward_kinematics(&self, com: &Vec2, pitch: f64, q: &Vec2) -> Vec2 {
        com + rotation(pitch) * (self.hip_offset_body + self.leg_chain(q))
    }

    /// Joint angles placing the foot at `foot`, knee flexed (`q_knee <= 0`).
    ///
    /// Targets within 1e-9 m of full extension are clamped to the straight leg.
    pub fn inverse_kinematics(
        &self,
        com: &Vec2,
        pitch: f64,
        foot: &Vec2,
    ) -> Result<Vec2, KinematicsError> {
        let d = rotation(pitch).transpose() * (foot - com) - self.hip_offset_body;
        let mut dist = d.norm();
        let (l1, l2) = (self.thigh_length, self.shank_length);
        let (lo, hi) = (self.min_reach(), self.max_reach());
        const SNAP: f64 = 1e-9;
        if dist > hi + SNAP || dist < lo - SNAP {
            return Err(KinematicsError::OutOfWorkspace {
                requested: dist,
                min_reach: lo,
                max_reach: hi,
            });
        }
        dist = dist.clamp(lo, hi);
        let cos_knee = ((dist * dist - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)).clamp(-1.0, 1.0);
        let knee = -cos_knee.acos();
        // Direction of the hip-foot line measured from the downward vertical.
        let beta = d.x.atan2(-d.y);
        let hip = beta - (l2 * knee.sin()).atan2(l1 + l2 * knee.cos());
        Ok(Vec2::new(hip, knee))
    }

    /// IK that projects unreachable targets onto the nearest reachable point
    /// along the hip-foot ray. Returns the angles and whether clamping occurred.
    pub fn inverse_kinematics_clamped(&self, com: &Vec2, pitch: f64, foot: &Vec2) -> (Vec2, bool) {
        match self.inverse_kinematics(com, pitch, foot) {
            Ok(q) => (q, false),
            Err(KinematicsError::OutOfWorkspace {
                requested,
                min_reach,
                max_reach,
            }) => {
                let hip = self.hip_world(com, pitch);
                let dir = if requested > 0.0 {
                    (foot - hip) / requested
                } else {
                    rotation(pitch) * Vec2::new(0.0, -1.0)
                };
                let reach = requested.clamp(min_reach, max_reach);
                let target = hip + dir * reach;
                let q = self
                    .inverse_kinematics(com, pitch, &target)
                    .expect("clamped target lies on the workspace boundary");
                (q, true)
            }
        }
    }

    /// Foot Jacobian `d p_f / d [com_x, com_z, pitch, q_hip, q_knee]`.
    pub fn foot_jacobian(&self, _com: &Vec2, pitch: f64, q: &Vec2) -> Matrix2x5 {
        let mut j = Matrix2x5::zeros();
        j[(0, 0)] = 1.0;
        j[(1, 1)] = 1.0;
        let col = rotation_derivative(pitch) * (self.hip_offset_body + self.leg_chain(q));
        j[(0, 2)] = col.x;
        j[(1, 2)] = col.y;
        let jq = self.joint_jacobian(pitch, q);
        j.fixed_view_mut::<2, 2>(0, 3).copy_from(&jq);
        j
    }

    /// The 2x2 joint block of the foot Jacobian, `d p_f / d q` in world axes.
    pub fn joint_jacobian(&self, pitch: f64, q: &Vec2) -> Matrix2<f64> {
        rotation(pitch) * self.chain_jacobian(q)
    }

    /// Joint torque (hip, knee) from a foot force `f` through `S * J^T * f`.
    pub fn selected_jt_force(&self, pitch: f64, q: &Vec2, f: &Vec2) -> Vec2 {
        self.joint_jacobian(pitch, q).transpose() * f
    }

    /// Motor torque that holds the ground reaction `grf` on a massless leg.
    ///
    /// Statics of the massless leg give `tau + tau_s(q) = -S J^T grf` when
    /// `grf` is the force the ground applies to the robot.
    pub fn motor_torque_for_grf(&self, pitch: f64, q: &Vec2, grf: &Vec2, ups: &UpsModel) -> Vec2 {
        -self.selected_jt_force(pitch, q, grf) - ups.torque_vec(q)
    }

    /// Ground reaction produced by total joint torque `tau_total` (motor plus
    /// spring) with the foot pinned. `None` at a kinematic singularity.
    pub fn grf_for_joint_torque(&self, pitch: f64, q: &Vec2, tau_total: &Vec2) -> Option<Vec2> {
        let jq = self.joint_jacobian(pitch, q);
        jq.transpose().try_inverse().map(|inv| -(inv * tau_total))
    }
}

/// Unidirectional linear spring acting in parallel with the knee motor.
///
/// The spring engages once the knee flexes past `engagement_angle` and pushes
/// the knee back toward extension; it is slack on the other side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpsModel {
    /// N*m/rad.
    pub stiffness: f64,
    pub engagement_angle: f64,
    pub enabled: bool,
}

impl Default for UpsModel {
    fn default() -> Self {
        Self {
            stiffness: 30.0,
            engagement_angle: -1.2,
            enabled: true,
        }
    }
}

impl UpsModel {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    /// Knee spring torque, positive toward extension.
    pub fn torque(&self, q_knee: f64) -> f64 {
        if self.enabled {
            self.stiffness * (self.engagement_angle - q_knee).max(0.0)
        } else {
            0.0
        }
    }

    /// `d torque / d q_knee`, taking the slack side at the kink.
    pub fn torque_derivative(&self, q_knee: f64) -> f64 {
        if self.enabled && q_knee < self.engagement_angle {
            -self.stiffness
        } else {
            0.0
        }
    }

    /// Spring torque on `(hip, knee)`.
    pub fn torque_vec(&self, q: &Vec2) -> Vec2 {
        Vec2::new(0.0, self.torque(q.y))
    }

    /// Stored elastic energy.
    pub fn potential(&self, q_knee: f64) -> f64 {
        if self.enabled {
            let x = (self.engagement_angle - q_knee).max(0.0);
            0.5 * self.stiffness * x * x
        } else {
            0.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::{FRAC_PI_2, PI};
    use nalgebra::Vector5;

    fn leg() -> LegGeometry {
        LegGeometry::default()
    }

    #[test]
    fn fk_golden_pose() {
        // Thigh horizontal forward, shank straight down from the knee.
        let p = leg().forward_kinematics(&Vec2::new(0.0, 0.4), 0.0, &Vec2::new(FRAC_PI_2, -FRAC_PI_2));
        assert!((p - Vec2::new(0.2, 0.2)).norm() < 1e-15);
    }

    #[test]
    fn fk_identity_rotation_is_chain() {
        let q = Vec2::new(0.4, -1.1);
        let l = leg();
        assert_eq!(l.forward_kinematics(&Vec2::zeros(), 0.0, &q), l.leg_chain(&q));
    }

    #[test]
    fn fk_pitch_preserves_distance() {
        let l = leg();
        let com = Vec2::new(0.3, 0.5);
        let q = Vec2::new(0.7, -1.3);
        let a = (l.forward_kinematics(&com, 0.0, &q) - com).norm();
        let b = (l.forward_kinematics(&com, PI, &q) - com).norm();
        assert!((a - b).abs() < 1e-15);
    }


    #[test]
    fn ik_full_extension_is_straight_knee() {
        let l = leg();
        let q = l
            .inverse_kinematics(&Vec2::new(0.0, 0.4), 0.0, &Vec2::new(0.0, 0.0))
            .unwrap();
        assert!(q.y.abs() < 1e-7);
        assert!(q.x.abs() < 1e-7);
        // Within the snap band beyond full extension.
        let q = l
            .inverse_kinematics(&Vec2::new(0.0, 0.4), 0.0, &Vec2::new(0.0, -5e-10))
            .unwrap();
        assert_eq!(q.y, 0.0);
    }

    #[test]
    fn ik_out_of_workspace() {
        let err = leg()
            .inverse_kinematics(&Vec2::new(0.0, 0.41), 0.0, &Vec2::zeros())
            .unwrap_err();
        let KinematicsError::OutOfWorkspace {
            requested,
            max_reach,
            ..
        } = err;
        assert!((requested - 0.41).abs() < 1e-12);
        assert_eq!(max_reach, 0.4);
    }

    #[test]
    fn ik_clamped_projects_to_boundary() {
        let l = leg();
        let com = Vec2::new(0.0, 0.5);
        let (q, clamped) = l.inverse_kinematics_clamped(&com, 0.0, &Vec2::zeros());
        assert!(clamped);
        let foot = l.forward_kinematics(&com, 0.0, &q);
        assert!((foot - Vec2::new(0.0, 0.1)).norm() < 1e-9);
    }

    fn fk_vec(l: &LegGeometry, g: &Vector5<f64>) -> Vec2 {
        l.forward_kinematics(&Vec2::new(g[0], g[1]), g[2], &Vec2::new(g[3], g[4]))
    }


    #[test]
    fn chain_hessian_matches_differences() {
        let l = leg();
        let q = Vec2::new(0.6, -1.4);
        let h = 1e-6;
        let hess = l.chain_hessian(&q);
        for j in 0..2 {
            let mut qp = q;
            let mut qm = q;
            qp[j] += h;
            qm[j] -= h;
            let fd = (l.chain_jacobian(&qp) - l.chain_jacobian(&qm)) / (2.0 * h);
            for i in 0..2 {
                let col = fd.column(i);
                assert!((col - hess[i][j]).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn straight_leg_is_singular() {
        let jq = leg().joint_jacobian(0.3, &Vec2::new(0.2, 0.0));
        assert!(jq.determinant().abs() < 1e-15);
    }

    #[test]
    fn selection_matrix_structure() {
        let s = selection_matrix();
        let v = Vector5::new(1.0, 2.0, 3.0, 4.0, 5.0);
        assert_eq!(s * v, Vec2::new(4.0, 5.0));
        for r in 0..2 {
            let ones = s.row(r).iter().filter(|&&x| x == 1.0).count();
            let zeros = s.row(r).iter().filter(|&&x| x == 0.0).count();
            assert_eq!((ones, zeros), (1, 4));
        }
    }

    #[test]
    fn moment_arms_for_vertical_force_under_hip() {
        // Foot directly below the hip: q_hip = -q_knee / 2. Hand trigonometry:
        // hip arm = 0, knee arm = shank * sin(q_knee / 2).
        let l = leg();
        let knee = -1.2_f64;
        let q = Vec2::new(0.6, knee);
        let f = Vec2::new(0.0, 10.0);
        let j = l.foot_jacobian(&Vec2::zeros(), 0.0, &q);
        let tau = selection_matrix() * j.transpose() * f;
        assert!(tau.x.abs() < 1e-15);
        assert!((tau.y - 10.0 * 0.2 * (-0.6_f64).sin()).abs() < 1e-14);
    }

    #[test]
    fn ups_piecewise_law() {
        let ups = UpsModel {
            stiffness: 20.0,
            engagement_angle: -1.2,
            enabled: true,
        };
        assert_eq!(ups.torque(-1.2), 0.0);
        assert_eq!(ups.torque(-0.7), 0.0);
        assert!((ups.torque(-1.7) - 10.0).abs() < 1e-12);
        let off = UpsModel {
            enabled: false,
            ..ups
        };
        assert_eq!(off.torque(-1.7), 0.0);
    }

    #[test]
    fn disabled_ups_reduces_to_plain_coupling() {
        let l = leg();
        let q = Vec2::new(0.5, -1.5);
        let f = Vec2::new(3.0, 30.0);
        let tau = l.motor_torque_for_grf(0.1, &q, &f, &UpsModel::disabled());
        assert_eq!(tau, -l.selected_jt_force(0.1, &q, &f));
    }

    #[test]
    fn spring_alone_produces_thrust() {
        let l = leg();
        let q = Vec2::new(0.75, -1.5);
        let ups = UpsModel::default();
        let f = l.grf_for_joint_torque(0.0, &q, &ups.torque_vec(&q)).unwrap();
        assert!(f.y > 0.0);
        let tau = l.motor_torque_for_grf(0.0, &q, &f, &ups);
        assert!(tau.norm() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn ik_round_trip(
            cx in -1.0f64..1.0, cz in 0.0f64..1.0, pitch in -PI..PI,
            dist in 0.01f64..0.4, ang in -PI..PI,
        ) {
            let l = leg();
            let com = Vec2::new(cx, cz);
            let foot = com + Vec2::new(ang.cos(), ang.sin()) * dist;
            let q = l.inverse_kinematics(&com, pitch, &foot).unwrap();
            proptest::prop_assert!(q.y <= 0.0);
            let back = l.forward_kinematics(&com, pitch, &q);
            proptest::prop_assert!((back - foot).norm() < 1e-10, "{} vs {}", back, foot);
        }

        #[test]
        fn jacobian_matches_central_differences(
            cx in -1.0f64..1.0, cz in -1.0f64..1.0, pitch in -PI..PI,
            hip in -0.5f64..2.0, knee in -2.5f64..-0.5,
        ) {
            let l = LegGeometry {
                hip_offset_body: Vec2::new(0.03, -0.02),
                ..leg()
            };
            let h = 1e-6;
            let g = Vector5::new(cx, cz, pitch, hip, knee);
            let j = l.foot_jacobian(&Vec2::new(g[0], g[1]), g[2], &Vec2::new(g[3], g[4]));
            for c in 0..5 {
                let mut gp = g;
                let mut gm = g;
                gp[c] += h;
                gm[c] -= h;
                let fd = (fk_vec(&l, &gp) - fk_vec(&l, &gm)) / (2.0 * h);
                for r in 0..2 {
                    let err = (fd[r] - j[(r, c)]).abs();
                    proptest::prop_assert!(err <= 1e-6 * j[(r, c)].abs().max(1.0), "({},{}) {}", r, c, err);
                }
            }
            proptest::prop_assert_eq!(j.fixed_view::<2, 2>(0, 0).into_owned(), Matrix2::identity());
        }

        #[test]
        fn ups_is_one_sided_and_monotone(a in -3.0f64..0.0, b in -3.0f64..0.0) {
            let ups = UpsModel::default();
            if a >= ups.engagement_angle {
                proptest::prop_assert_eq!(ups.torque(a), 0.0);
            }
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            proptest::prop_assert!(ups.torque(lo) >= ups.torque(hi));
        }
    }
}
