//! Planar ground-truth plant: rigid torso on a massless two-link leg.
//!
//! In stance the foot is pinned and the GRF follows from the applied joint
//! torques through the inverse transpose of the joint Jacobian. In flight the
//! torso is ballistic and the joints are driven through a small rotor inertia.
//! [`Plant::step`] stops at the first contact event inside the interval and
//! reports it, so the caller can re-tick the controller in the new phase.

use alloc::vec::Vec;

#[allow(unused_imports)] // float math lives in std when it is linked
use num_traits::Float;
use thiserror::Error;

use crate::kinematics::{rotation_derivative, LegGeometry, UpsModel};
use crate::slip::ApexState;
use crate::state::{wedge, RobotConstants, RobotState, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Flight,
    Stance,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantState {
    pub robot: RobotState,
    pub phase: Phase,
    /// Pinned foot, meaningful in stance.
    pub stance_foot: Vec2,
    pub time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActuationCommand {
    /// Motor torques `(hip, knee)`.
    Torque(Vec2),
    /// Joint PD law evaluated by the plant at its own rate.
    Pd {
        q_des: Vec2,
        kp: Vec2,
        kd: Vec2,
        /// Added to the PD torque before clamping.
        feedforward: Vec2,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContactEvent {
    Touchdown,
    Liftoff,
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum PlantError {
    #[error("step {0} s exceeds the 1 ms limit")]
    StepTooLarge(f64),
    #[error("kinematic singularity at t = {time}: |det J_q| = {det}")]
    Singular { time: f64, det: f64 },
    #[error("stance foot out of reach at t = {time}")]
    OutOfReach { time: f64 },
    #[error("foot slips at t = {time}: grf ({fx}, {fz})")]
    Slip { time: f64, fx: f64, fz: f64 },
    #[error("joint {joint} at {angle} rad left the sanity box at t = {time}")]
    JointLimit { time: f64, joint: usize, angle: f64 },
    #[error("non-finite state at t = {0}")]
    NonFinite(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantSettings {
    pub rotor_inertia: f64,
    /// Joint integration step in flight.
    pub flight_substep: f64,
    /// Contact events are located to this time tolerance.
    pub event_tolerance: f64,
    pub singular_det: f64,
    /// Normal force below which the contact releases instead of slipping.
    pub release_force: f64,
    /// Margin around the joint limits before a fault is raised.
    pub joint_margin: f64,
    pub max_dt: f64,
}

impl Default for PlantSettings {
    fn default() -> Self {
        Self {
            rotor_inertia: 1e-4,
            flight_substep: 5e-5,
            event_tolerance: 1e-8,
            singular_det: 1e-8,
            release_force: 0.05,
            joint_margin: 0.2,
            max_dt: 1e-3 + 1e-12,
        }
    }
}

/// State after one call to [`Plant::step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutput {
    pub state: PlantState,
    /// GRF at the end of the interval (zero in flight).
    pub grf: Vec2,
    /// Clamped motor torque at the end of the interval.
    pub tau: Vec2,
    /// Per-motor mechanical power `tau_i * qdot_i` at the end of the interval.
    pub power: Vec2,
    pub event: Option<ContactEvent>,
    /// Time actually advanced.
    pub elapsed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plant {
    pub constants: RobotConstants,
    pub geometry: LegGeometry,
    pub ups: UpsModel,
    pub settings: PlantSettings,
}

/// Torso state `[p_x, p_z, theta, v_x, v_z, theta_dot]`.
type Torso = [f64; 6];

fn torso_of(r: &RobotState) -> Torso {
    [r.p_c.x, r.p_c.y, r.theta, r.v_c.x, r.v_c.y, r.theta_dot]
}

fn axpy(a: &Torso, h: f64, k: &Torso) -> Torso {
    core::array::from_fn(|i| a[i] + h * k[i])
}

/// Stance quantities at one torso state.
#[derive(Debug, Clone, Copy)]
struct StanceEval {
    q: Vec2,
    qdot: Vec2,
    tau: Vec2,
    grf: Vec2,
}

impl Plant {
    pub fn new(constants: RobotConstants, geometry: LegGeometry, ups: UpsModel) -> Self {
        Self {
            constants,
            geometry,
            ups,
            settings: PlantSettings::default(),
        }
    }

    pub fn foot_position(&self, r: &RobotState) -> Vec2 {
        self.geometry.forward_kinematics(&r.p_c, r.theta, &r.q)
    }

    fn clamp(&self, tau: Vec2) -> Vec2 {
        self.constants.clamp_torque(tau)
    }

    fn command_torque(&self, cmd: &ActuationCommand, q: &Vec2, qdot: &Vec2) -> Vec2 {
        match cmd {
            ActuationCommand::Torque(t) => self.clamp(*t),
            ActuationCommand::Pd {
                q_des,
                kp,
                kd,
                feedforward,
            } => self.clamp(kp.component_mul(&(q_des - q)) - kd.component_mul(qdot) + feedforward),
        }
    }

    fn stance_eval(&self, x: &Torso, foot: &Vec2, cmd: &ActuationCommand, time: f64) -> Result<StanceEval, PlantError> {
        let com = Vec2::new(x[0], x[1]);
        let q = self
            .geometry
            .inverse_kinematics(&com, x[2], foot)
            .map_err(|_| PlantError::OutOfReach { time })?;
        let jq = self.geometry.joint_jacobian(x[2], &q);
        let det = jq.determinant();
        if det.abs() < self.settings.singular_det {
            return Err(PlantError::Singular { time, det });
        }
        // 0 = v + dFK/dtheta * theta_dot + J_q qdot
        let dtheta = rotation_derivative(x[2]) * (self.geometry.hip_offset_body + self.geometry.leg_chain(&q));
        let v = Vec2::new(x[3], x[4]) + dtheta * x[5];
        let qdot = -(jq.try_inverse().ok_or(PlantError::Singular { time, det })? * v);
        let tau = self.command_torque(cmd, &q, &qdot);
        let total = tau + self.ups.torque_vec(&q);
        let grf = -(jq.transpose().try_inverse().ok_or(PlantError::Singular { time, det })? * total);
        Ok(StanceEval { q, qdot, tau, grf })
    }

    fn stance_rhs(&self, x: &Torso, foot: &Vec2, cmd: &ActuationCommand, time: f64) -> Result<Torso, PlantError> {
        let e = self.stance_eval(x, foot, cmd, time)?;
        let c = &self.constants;
        let r = foot - Vec2::new(x[0], x[1]);
        Ok([
            x[3],
            x[4],
            x[5],
            e.grf.x / c.mass + c.gravity.x,
            e.grf.y / c.mass + c.gravity.y,
            wedge(&r, &e.grf) / c.inertia,
        ])
    }

    fn stance_rk4(&self, x: &Torso, foot: &Vec2, cmd: &ActuationCommand, t: f64, h: f64) -> Result<Torso, PlantError> {
        let k1 = self.stance_rhs(x, foot, cmd, t)?;
        let k2 = self.stance_rhs(&axpy(x, 0.5 * h, &k1), foot, cmd, t)?;
        let k3 = self.stance_rhs(&axpy(x, 0.5 * h, &k2), foot, cmd, t)?;
        let k4 = self.stance_rhs(&axpy(x, h, &k3), foot, cmd, t)?;
        Ok(core::array::from_fn(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])))
    }

    /// Contact persists while the normal force is positive and not vanishing
    /// with the tangential force outside the cone.
    fn releases(&self, grf: &Vec2) -> bool {
        grf.y <= 0.0 || (grf.y < self.settings.release_force && grf.x.abs() > self.constants.friction * grf.y)
    }

    fn stance_state(&self, x: &Torso, e: &StanceEval) -> RobotState {
        RobotState {
            p_c: Vec2::new(x[0], x[1]),
            theta: x[2],
            v_c: Vec2::new(x[3], x[4]),
            theta_dot: x[5],
            q: e.q,
            qdot: e.qdot,
            contact: true,
        }
    }

    fn ballistic(&self, x: &Torso, h: f64) -> Torso {
        let g = self.constants.gravity;
        [
            x[0] + x[3] * h + 0.5 * g.x * h * h,
            x[1] + x[4] * h + 0.5 * g.y * h * h,
            x[2] + x[5] * h,
            x[3] + g.x * h,
            x[4] + g.y * h,
            x[5],
        ]
    }

    fn joint_rhs(&self, q: &Vec2, qd: &Vec2, cmd: &ActuationCommand) -> (Vec2, Vec2) {
        let tau = self.command_torque(cmd, q, qd);
        (*qd, (tau + self.ups.torque_vec(q)) / self.settings.rotor_inertia)
    }

    fn joint_rk4(&self, q: &Vec2, qd: &Vec2, cmd: &ActuationCommand, h: f64) -> (Vec2, Vec2) {
        let (a1, b1) = self.joint_rhs(q, qd, cmd);
        let (a2, b2) = self.joint_rhs(&(q + a1 * (0.5 * h)), &(qd + b1 * (0.5 * h)), cmd);
        let (a3, b3) = self.joint_rhs(&(q + a2 * (0.5 * h)), &(qd + b2 * (0.5 * h)), cmd);
        let (a4, b4) = self.joint_rhs(&(q + a3 * h), &(qd + b3 * h), cmd);
        (
            q + (a1 + a2 * 2.0 + a3 * 2.0 + a4) * (h / 6.0),
            qd + (b1 + b2 * 2.0 + b3 * 2.0 + b4) * (h / 6.0),
        )
    }

    /// Flight state after `h`: analytic torso, substepped joints.
    fn flight_advance(&self, r: &RobotState, cmd: &ActuationCommand, h: f64) -> RobotState {
        let x = self.ballistic(&torso_of(r), h);
        let n = (h / self.settings.flight_substep).ceil().max(1.0) as usize;
        let hs = h / n as f64;
        let (mut q, mut qd) = (r.q, r.qdot);
        for _ in 0..n {
            (q, qd) = self.joint_rk4(&q, &qd, cmd, hs);
        }
        RobotState {
            p_c: Vec2::new(x[0], x[1]),
            theta: x[2],
            v_c: Vec2::new(x[3], x[4]),
            theta_dot: x[5],
            q,
            qdot: qd,
            contact: false,
        }
    }

    fn check_joints(&self, r: &RobotState, time: f64) -> Result<(), PlantError> {
        if !r.is_finite() {
            return Err(PlantError::NonFinite(time));
        }
        let m = self.settings.joint_margin;
        for j in 0..2 {
            let a = r.q[j];
            if a < self.constants.q_min[j] - m || a > self.constants.q_max[j] + m {
                return Err(PlantError::JointLimit { time, joint: j, angle: a });
            }
        }
        Ok(())
    }

    /// Advance by `dt` under a held command, stopping early at a contact event.
    pub fn step(&self, state: &PlantState, cmd: &ActuationCommand, dt: f64) -> Result<StepOutput, PlantError> {
        if dt > self.settings.max_dt {
            return Err(PlantError::StepTooLarge(dt));
        }
        match state.phase {
            Phase::Stance => self.step_stance(state, cmd, dt),
            Phase::Flight => self.step_flight(state, cmd, dt),
        }
    }

    fn step_stance(&self, state: &PlantState, cmd: &ActuationCommand, dt: f64) -> Result<StepOutput, PlantError> {
        let foot = state.stance_foot;
        let x0 = torso_of(&state.robot);
        let t0 = state.time;
        let e0 = self.stance_eval(&x0, &foot, cmd, t0)?;
        if self.releases(&e0.grf) {
            return Ok(self.liftoff(state, &x0, &e0, 0.0));
        }
        self.check_cone(&e0.grf, t0)?;
        let x1 = self.stance_rk4(&x0, &foot, cmd, t0, dt)?;
        let e1 = self.stance_eval(&x1, &foot, cmd, t0 + dt)?;
        if self.releases(&e1.grf) {
            let (mut lo, mut hi) = (0.0, dt);
            while hi - lo > self.settings.event_tolerance {
                let mid = 0.5 * (lo + hi);
                let xm = self.stance_rk4(&x0, &foot, cmd, t0, mid)?;
                let em = self.stance_eval(&xm, &foot, cmd, t0 + mid)?;
                if self.releases(&em.grf) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let xh = self.stance_rk4(&x0, &foot, cmd, t0, hi)?;
            let eh = self.stance_eval(&xh, &foot, cmd, t0 + hi)?;
            return Ok(self.liftoff(state, &xh, &eh, hi));
        }
        self.check_cone(&e1.grf, t0 + dt)?;
        debug_assert!({
            let back = self.geometry.motor_torque_for_grf(x1[2], &e1.q, &e1.grf, &self.ups);
            (back - e1.tau).amax() <= 1e-8 * (1.0 + e1.tau.amax())
        });
        let robot = self.stance_state(&x1, &e1);
        self.check_joints(&robot, t0 + dt)?;
        Ok(StepOutput {
            state: PlantState {
                robot,
                phase: Phase::Stance,
                stance_foot: foot,
                time: t0 + dt,
            },
            grf: e1.grf,
            tau: e1.tau,
            power: e1.tau.component_mul(&e1.qdot),
            event: None,
            elapsed: dt,
        })
    }

    fn check_cone(&self, grf: &Vec2, time: f64) -> Result<(), PlantError> {
        if grf.x.abs() > self.constants.friction * grf.y + 1e-9 {
            return Err(PlantError::Slip {
                time,
                fx: grf.x,
                fz: grf.y,
            });
        }
        Ok(())
    }

    /// Switch to flight; joint velocities carry over from the stance kinematics.
    fn liftoff(&self, state: &PlantState, x: &Torso, e: &StanceEval, elapsed: f64) -> StepOutput {
        let mut robot = self.stance_state(x, e);
        robot.contact = false;
        StepOutput {
            state: PlantState {
                robot,
                phase: Phase::Flight,
                stance_foot: state.stance_foot,
                time: state.time + elapsed,
            },
            grf: Vec2::zeros(),
            tau: e.tau,
            power: e.tau.component_mul(&e.qdot),
            event: Some(ContactEvent::Liftoff),
            elapsed,
        }
    }

    fn foot_height(&self, r: &RobotState) -> f64 {
        self.foot_position(r).y
    }

    /// Downward-moving foot velocity at the current state.
    fn foot_descending(&self, r: &RobotState) -> bool {
        let j = self.geometry.foot_jacobian(&r.p_c, r.theta, &r.q);
        let gv = nalgebra::SVector::<f64, 5>::from([r.v_c.x, r.v_c.y, r.theta_dot, r.qdot.x, r.qdot.y]);
        (j * gv).y < 0.0
    }

    fn step_flight(&self, state: &PlantState, cmd: &ActuationCommand, dt: f64) -> Result<StepOutput, PlantError> {
        let r0 = state.robot;
        let t0 = state.time;
        let h0 = self.foot_height(&r0);
        // a foot resting on the ground right after liftoff is not a new contact
        if h0 < -self.settings.event_tolerance && self.foot_descending(&r0) {
            return Ok(self.touchdown(&r0, t0, 0.0));
        }
        let r1 = self.flight_advance(&r0, cmd, dt);
        let h1 = self.foot_height(&r1);
        if h1 <= 0.0 && h0 > 0.0 {
            let (mut lo, mut hi) = (0.0, dt);
            while hi - lo > self.settings.event_tolerance {
                let mid = 0.5 * (lo + hi);
                if self.foot_height(&self.flight_advance(&r0, cmd, mid)) <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let rh = self.flight_advance(&r0, cmd, hi);
            return Ok(self.touchdown(&rh, t0, hi));
        }
        self.check_joints(&r1, t0 + dt)?;
        let tau = self.command_torque(cmd, &r1.q, &r1.qdot);
        Ok(StepOutput {
            state: PlantState {
                robot: r1,
                phase: Phase::Flight,
                stance_foot: state.stance_foot,
                time: t0 + dt,
            },
            grf: Vec2::zeros(),
            tau,
            power: tau.component_mul(&r1.qdot),
            event: None,
            elapsed: dt,
        })
    }

    /// Pin the foot where it crossed the ground. The massless leg leaves the
    /// torso velocity unchanged; joint velocities snap to the pinned kinematics.
    fn touchdown(&self, r: &RobotState, t0: f64, elapsed: f64) -> StepOutput {
        let p = self.foot_position(r);
        let foot = Vec2::new(p.x, 0.0);
        let mut robot = *r;
        robot.contact = true;
        let x = torso_of(r);
        let hold = ActuationCommand::Torque(Vec2::zeros());
        if let Ok(e) = self.stance_eval(&x, &foot, &hold, t0 + elapsed) {
            robot.q = e.q;
            robot.qdot = e.qdot;
        }
        StepOutput {
            state: PlantState {
                robot,
                phase: Phase::Stance,
                stance_foot: foot,
                time: t0 + elapsed,
            },
            grf: Vec2::zeros(),
            tau: Vec2::zeros(),
            power: Vec2::zeros(),
            event: Some(ContactEvent::Touchdown),
            elapsed,
        }
    }

    /// GRF the plant would produce right now under `cmd` (stance only).
    pub fn stance_grf(&self, state: &PlantState, cmd: &ActuationCommand) -> Result<Vec2, PlantError> {
        let e = self.stance_eval(&torso_of(&state.robot), &state.stance_foot, cmd, state.time)?;
        Ok(e.grf)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApexEvent {
    pub time: f64,
    pub apex: ApexState,
    pub x: f64,
}

/// Apex between two consecutive flight samples: the `v_z` zero crossing of the
/// ballistic arc through `prev`, refined by bisection.
pub fn detect_apex(prev: &PlantState, cur: &PlantState, gravity: f64) -> Option<ApexEvent> {
    if prev.phase != Phase::Flight || cur.phase != Phase::Flight {
        return None;
    }
    let (v0, v1) = (prev.robot.v_c.y, cur.robot.v_c.y);
    if !(v0 > 0.0 && v1 <= 0.0) {
        return None;
    }
    let vz = |h: f64| v0 - gravity * h;
    let (mut lo, mut hi) = (0.0, cur.time - prev.time);
    for _ in 0..200 {
        if hi - lo <= 1e-13 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if vz(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let h = 0.5 * (lo + hi);
    let p = prev.robot.p_c;
    Some(ApexEvent {
        time: prev.time + h,
        apex: ApexState::new(p.y + v0 * h - 0.5 * gravity * h * h, prev.robot.v_c.x),
        x: p.x + prev.robot.v_c.x * h,
    })
}

/// First apex in a sampled history.
pub fn detect_apex_in(history: &[PlantState], gravity: f64) -> Option<ApexEvent> {
    history.windows(2).find_map(|w| detect_apex(&w[0], &w[1], gravity))
}

/// Flight-phase states sampled by repeated steps; convenience for tests and logs.
pub fn simulate(
    plant: &Plant,
    start: &PlantState,
    cmd: &ActuationCommand,
    dt: f64,
    duration: f64,
) -> Result<Vec<StepOutput>, PlantError> {
    let mut out = Vec::new();
    let mut s = *start;
    let end = start.time + duration;
    while s.time < end - 1e-12 {
        let o = plant.step(&s, cmd, dt.min(end - s.time))?;
        s = o.state;
        out.push(o);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plant(ups: UpsModel) -> Plant {
        Plant::new(RobotConstants::default(), LegGeometry::default(), ups)
    }

    fn flight_state(h: f64, vx: f64, vz: f64) -> PlantState {
        PlantState {
            robot: RobotState {
                p_c: Vec2::new(0.0, h),
                v_c: Vec2::new(vx, vz),
                theta: 0.0,
                theta_dot: 0.0,
                q: Vec2::new(0.6, -1.3),
                qdot: Vec2::zeros(),
                contact: false,
            },
            phase: Phase::Flight,
            stance_foot: Vec2::zeros(),
            time: 0.0,
        }
    }

    fn hold(q: Vec2) -> ActuationCommand {
        ActuationCommand::Pd {
            q_des: q,
            kp: Vec2::new(40.0, 40.0),
            kd: Vec2::new(0.5, 0.5),
            feedforward: Vec2::zeros(),
        }
    }

    #[test]
    fn flight_torso_is_the_closed_form_arc() {
        let p = plant(UpsModel::disabled());
        let s0 = flight_state(2.0, 0.7, 1.5);
        let out = simulate(&p, &s0, &ActuationCommand::Torque(Vec2::zeros()), 1e-3, 0.3).unwrap();
        let g = 9.81;
        for o in &out {
            let t = o.state.time;
            let z = 2.0 + 1.5 * t - 0.5 * g * t * t;
            assert!((o.state.robot.p_c.y - z).abs() < 1e-9);
            assert!((o.state.robot.p_c.x - 0.7 * t).abs() < 1e-9);
        }
        let states: Vec<PlantState> = core::iter::once(s0).chain(out.iter().map(|o| o.state)).collect();
        let apex = detect_apex_in(&states, g).unwrap();
        assert!((apex.time - 1.5 / g).abs() < 1e-9);
        assert!((apex.apex.height - (2.0 + 1.5 * 1.5 / (2.0 * g))).abs() < 1e-8);
    }

    #[test]
    fn descending_flight_has_no_apex() {
        let p = plant(UpsModel::disabled());
        let s0 = flight_state(2.0, 0.0, -0.5);
        let out = simulate(&p, &s0, &hold(Vec2::new(0.6, -1.3)), 1e-3, 0.1).unwrap();
        let states: Vec<PlantState> = out.iter().map(|o| o.state).collect();
        assert!(detect_apex_in(&states, 9.81).is_none());
    }

    #[test]
    fn touchdown_is_located_and_keeps_velocity() {
        let p = plant(UpsModel::default());
        let q = Vec2::new(0.6, -1.3);
        let mut s = flight_state(0.45, 0.5, 0.0);
        s.robot.q = q;
        let cmd = hold(q);
        let mut last = s;
        let td = loop {
            let o = p.step(&last, &cmd, 1e-3).unwrap();
            if o.event == Some(ContactEvent::Touchdown) {
                break o;
            }
            last = o.state;
        };
        assert_eq!(td.state.phase, Phase::Stance);
        assert!(td.state.stance_foot.y == 0.0);
        assert!(p.foot_position(&td.state.robot).y.abs() < 1e-6);
        let t = td.state.time;
        assert!((td.state.robot.v_c.y - (-9.81 * t)).abs() < 1e-9);
        assert!((td.state.robot.v_c.x - 0.5).abs() < 1e-12);
    }

    #[test]
    fn gravity_compensating_torque_holds_still() {
        let p = plant(UpsModel::default());
        let c = RobotConstants::default();
        let geo = LegGeometry::default();
        let com = Vec2::new(0.0, 0.3);
        let q = geo.inverse_kinematics(&com, 0.0, &Vec2::zeros()).unwrap();
        let tau = geo.motor_torque_for_grf(0.0, &q, &Vec2::new(0.0, c.weight()), &p.ups);
        let s = PlantState {
            robot: RobotState {
                p_c: com,
                v_c: Vec2::zeros(),
                theta: 0.0,
                theta_dot: 0.0,
                q,
                qdot: Vec2::zeros(),
                contact: true,
            },
            phase: Phase::Stance,
            stance_foot: Vec2::zeros(),
            time: 0.0,
        };
        let out = simulate(&p, &s, &ActuationCommand::Torque(tau), 1e-3, 1.0).unwrap();
        let end = out.last().unwrap().state.robot;
        assert!((end.p_c - com).amax() < 1e-8);
        assert!(end.v_c.amax() < 1e-8 && end.theta.abs() < 1e-8);
    }

    #[test]
    fn engaged_spring_alone_produces_thrust() {
        let p = plant(UpsModel::default());
        let geo = LegGeometry::default();
        let com = Vec2::new(0.0, 0.27);
        let q = geo.inverse_kinematics(&com, 0.0, &Vec2::zeros()).unwrap();
        let s = PlantState {
            robot: RobotState {
                p_c: com,
                q,
                contact: true,
                ..Default::default()
            },
            phase: Phase::Stance,
            stance_foot: Vec2::zeros(),
            time: 0.0,
        };
        let f = p.stance_grf(&s, &ActuationCommand::Torque(Vec2::zeros())).unwrap();
        let expect = geo.grf_for_joint_torque(0.0, &q, &p.ups.torque_vec(&q)).unwrap();
        assert!((f - expect).amax() < 1e-12);
        assert!(f.y > 0.0);
    }

    #[test]
    fn releasing_torque_lifts_off_immediately() {
        let p = plant(UpsModel::default());
        let geo = LegGeometry::default();
        let com = Vec2::new(0.0, 0.3);
        let q = geo.inverse_kinematics(&com, 0.0, &Vec2::zeros()).unwrap();
        let s = PlantState {
            robot: RobotState {
                p_c: com,
                v_c: Vec2::new(0.0, 1.0),
                q,
                contact: true,
                ..Default::default()
            },
            phase: Phase::Stance,
            stance_foot: Vec2::zeros(),
            time: 0.0,
        };
        let o = p.step(&s, &ActuationCommand::Torque(-p.ups.torque_vec(&q)), 1e-3).unwrap();
        assert_eq!(o.event, Some(ContactEvent::Liftoff));
        assert_eq!(o.elapsed, 0.0);
        assert_eq!(o.state.phase, Phase::Flight);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]

        #[test]
        fn touchdown_never_changes_com_velocity(h in 0.35f64..0.8, vx in -2.0f64..2.0, vz in -1.0f64..1.5) {
            let p = plant(UpsModel::default());
            let q = Vec2::new(0.6, -1.3);
            let cmd = hold(q);
            let mut s = flight_state(h, vx, vz);
            while s.time < 2.0 {
                let o = p.step(&s, &cmd, 1e-3).unwrap();
                if o.event == Some(ContactEvent::Touchdown) {
                    let t = o.state.time;
                    proptest::prop_assert!((o.state.robot.v_c.y - (vz - 9.81 * t)).abs() < 1e-9);
                    proptest::prop_assert!((o.state.robot.v_c.x - vx).abs() < 1e-9);
                    return Ok(());
                }
                s = o.state;
            }
            proptest::prop_assert!(false, "no touchdown");
        }
    }
}
