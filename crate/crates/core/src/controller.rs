//! Hopping controller: apex-triggered SLIP sketch, SRB MPC warm start,
//! kinodynamic SQP and stance torque extraction, plus Bezier swing tracking.

use alloc::vec::Vec;

#[allow(unused_imports)] // float math lives in std when it is linked
use num_traits::Float;
use thiserror::Error;

use crate::kinematics::{LegGeometry, UpsModel};
use crate::kino_mpc::{torque_extraction, KinoMpc, KinoProblem, SqpSettings};
use crate::plant::{ActuationCommand, ApexEvent, Phase, PlantState};
use crate::qp::{QpProblem, QpStatus, SolverSettings};
use crate::slip::{
    generate_motion_sketch, stance_sketch, ApexState, GaitLibrary, MotionSketch, ReturnMapFailure, SlipError,
    SlipParams, SlipState,
};
use crate::srb_mpc::{
    build_srb_qp, Discretization, HorizonStep, MpcError, MpcSolution, MpcWeights, SrbMpc, SrbReference, SrbState,
};
use crate::state::{RobotConstants, Vec2};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControllerError {
    #[error("{events} contact events do not fit in a horizon of {horizon} steps")]
    TooManyEvents { events: usize, horizon: usize },
    #[error("invalid segmentation input: {0}")]
    Segmentation(&'static str),
    #[error(transparent)]
    Mpc(#[from] MpcError),
    #[error(transparent)]
    Library(#[from] SlipError),
    #[error("SLIP sketch failed: {0}")]
    Sketch(#[from] ReturnMapFailure),
    #[error("invalid controller configuration: {0}")]
    Config(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdGains {
    pub kp: Vec2,
    pub kd: Vec2,
}

impl Default for PdGains {
    fn default() -> Self {
        Self {
            kp: Vec2::new(40.0, 40.0),
            kd: Vec2::new(0.5, 0.5),
        }
    }
}

/// `K_P (q_des - q) - K_D qdot` with a zero joint-velocity reference.
pub fn swing_pd(q_des: &Vec2, q: &Vec2, qdot: &Vec2, gains: &PdGains) -> Vec2 {
    gains.kp.component_mul(&(q_des - q)) - gains.kd.component_mul(qdot)
}

/// Degree-6 planar Bezier curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BezierCurve {
    pub points: [Vec2; 7],
}

impl BezierCurve {
    /// Point at normalized time `s`, clamped to `[0, 1]` (de Casteljau).
    pub fn sample(&self, s: f64) -> Vec2 {
        let s = s.clamp(0.0, 1.0);
        let mut p = self.points;
        for n in (1..7).rev() {
            for i in 0..n {
                p[i] = p[i] * (1.0 - s) + p[i + 1] * s;
            }
        }
        p[0]
    }
}

/// Swing curve from `liftoff` to `target`: the first and last three control
/// points share the endpoint abscissa (zero end velocity in x) and the middle
/// three are raised by `clearance` above the higher endpoint. A negative
/// clearance lowers them instead.
pub fn swing_curve(liftoff: &Vec2, target: &Vec2, clearance: f64) -> BezierCurve {
    let top = liftoff.y.max(target.y) + clearance;
    let mid_x = 0.5 * (liftoff.x + target.x);
    BezierCurve {
        points: [
            *liftoff,
            *liftoff,
            Vec2::new(liftoff.x, top),
            Vec2::new(mid_x, top),
            Vec2::new(target.x, top),
            *target,
            *target,
        ],
    }
}

/// A swing curve placed in time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwingPlan {
    pub curve: BezierCurve,
    pub start_time: f64,
    pub duration: f64,
}

impl SwingPlan {
    pub fn sample(&self, t: f64) -> Vec2 {
        self.curve.sample((t - self.start_time) / self.duration)
    }
}

pub fn swing_trajectory(liftoff: &Vec2, target: &Vec2, start_time: f64, duration: f64, clearance: f64) -> Result<SwingPlan, ControllerError> {
    if !(duration > 0.0) {
        return Err(ControllerError::Config("swing duration must be positive"));
    }
    Ok(SwingPlan {
        curve: swing_curve(liftoff, target, clearance),
        start_time,
        duration,
    })
}

/// Contact state at the horizon start and the absolute times it toggles.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactSchedule {
    pub initial_contact: bool,
    pub events: Vec<f64>,
}

/// Events this close to a grid point are treated as lying on it.
const ALIGN_TOL: f64 = 1e-12;

/// `n` steps starting at `t0` whose boundaries include every event inside the
/// span `n * nominal_dt`. Events move the nearest free interior grid point;
/// the assignment minimizing the total displacement is chosen.
pub fn segment_timesteps(
    t0: f64,
    nominal_dt: f64,
    schedule: &ContactSchedule,
    n: usize,
) -> Result<Vec<HorizonStep>, ControllerError> {
    if n == 0 || !(nominal_dt > 0.0) {
        return Err(ControllerError::Segmentation("horizon and step must be positive"));
    }
    if schedule.events.windows(2).any(|w| w[1] < w[0]) {
        return Err(ControllerError::Segmentation("events must be sorted"));
    }
    let span = n as f64 * nominal_dt;
    let tol = ALIGN_TOL * span.max(1.0);
    let mut grid: Vec<f64> = (0..=n).map(|i| t0 + i as f64 * nominal_dt).collect();
    grid[n] = t0 + span;
    let inside: Vec<f64> = schedule
        .events
        .iter()
        .copied()
        .filter(|&e| e > t0 + tol && e < t0 + span - tol)
        .collect();
    if inside.len() > n.saturating_sub(1) {
        return Err(ControllerError::TooManyEvents {
            events: inside.len(),
            horizon: n,
        });
    }
    for (i, e) in assign_boundaries(&grid, &inside).into_iter().zip(&inside) {
        grid[i] = *e;
    }
    // toggles before the horizon start decide the initial contact state
    let before = schedule.events.iter().filter(|&&e| e <= t0 + tol).count();
    let mut contact = schedule.initial_contact ^ (before % 2 == 1);
    let mut steps = Vec::with_capacity(n);
    let mut next = 0;
    for k in 0..n {
        steps.push(HorizonStep {
            t: grid[k],
            dt: grid[k + 1] - grid[k],
            contact,
        });
        while next < inside.len() && inside[next] <= grid[k + 1] + tol {
            contact = !contact;
            next += 1;
        }
    }
    // an event that sits on the grid end flips nothing inside the horizon
    Ok(steps)
}

/// Strictly increasing interior indices (in `1..n`) for sorted `events`
/// minimizing `sum |grid[i_j] - e_j|`; ties go to the smaller index.
fn assign_boundaries(grid: &[f64], events: &[f64]) -> Vec<usize> {
    let n = grid.len() - 1;
    let m = events.len();
    if m == 0 {
        return Vec::new();
    }
    let slots = n - 1;
    // cost[j][s]: best total for events 0..=j with event j on interior slot s
    let mut cost = alloc::vec![alloc::vec![f64::INFINITY; slots]; m];
    let mut from = alloc::vec![alloc::vec![usize::MAX; slots]; m];
    for s in 0..slots {
        cost[0][s] = (grid[s + 1] - events[0]).abs();
    }
    for j in 1..m {
        let mut best = f64::INFINITY;
        let mut arg = usize::MAX;
        for s in 0..slots {
            if s >= 1 && cost[j - 1][s - 1] < best {
                best = cost[j - 1][s - 1];
                arg = s - 1;
            }
            if best.is_finite() {
                cost[j][s] = best + (grid[s + 1] - events[j]).abs();
                from[j][s] = arg;
            }
        }
    }
    let mut s = 0;
    for c in 1..slots {
        if cost[m - 1][c] < cost[m - 1][s] {
            s = c;
        }
    }
    let mut out = alloc::vec![0; m];
    for j in (0..m).rev() {
        out[j] = s + 1;
        if j > 0 {
            s = from[j][s];
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerConfig {
    pub weights: MpcWeights,
    pub sqp: SqpSettings,
    pub srb_solver: SolverSettings,
    pub gains: PdGains,
    /// Swing apex lift above the higher endpoint (m).
    pub clearance: f64,
    /// Time covered by the MPC horizon (s).
    pub horizon_span: f64,
    pub control_dt: f64,
    /// SLIP sketch sampling step (s).
    pub sketch_dt: f64,
    /// Fraction of the predicted flight time used to reach the touchdown pose.
    pub swing_fraction: f64,
    pub discretization: Discretization,
    /// Smallest normal force commanded before the sketched liftoff (N).
    pub min_normal_force: f64,
    /// The commanded GRF is kept inside `friction_margin * mu`.
    pub friction_margin: f64,
    /// Skip the kinodynamic layer and map the SRB force directly.
    pub srb_only: bool,
    /// Late in stance, a held torque whose normal force would drop below
    /// this inside the tick is replaced by the release command (N).
    pub release_normal_force: f64,
    /// Shape the first-step force with the sketch profile over the tick.
    pub intra_step_shaping: bool,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            weights: MpcWeights::default(),
            sqp: SqpSettings::default(),
            srb_solver: SolverSettings::default(),
            gains: PdGains::default(),
            clearance: 0.08,
            horizon_span: 0.45,
            control_dt: 0.005,
            sketch_dt: 0.002,
            swing_fraction: 0.6,
            discretization: Discretization::SecondOrder,
            min_normal_force: 1.0,
            friction_margin: 0.9,
            srb_only: false,
            release_normal_force: 5.0,
            intra_step_shaping: true,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), ControllerError> {
        self.weights.validate()?;
        self.sqp.validate()?;
        self.srb_solver.validate().map_err(MpcError::from)?;
        let pos = [
            self.clearance + 1.0,
            self.horizon_span,
            self.control_dt,
            self.sketch_dt,
            self.swing_fraction,
            self.min_normal_force,
            self.friction_margin,
            self.release_normal_force,
        ];
        if pos.iter().any(|v| !(*v > 0.0 && v.is_finite())) || self.clearance < 0.0 {
            return Err(ControllerError::Config("durations, fractions and margins must be positive"));
        }
        if self.swing_fraction > 1.0 || self.friction_margin > 1.0 {
            return Err(ControllerError::Config("swing_fraction and friction_margin must not exceed 1"));
        }
        if self.gains.kp.iter().chain(self.gains.kd.iter()).any(|g| !(*g > 0.0)) {
            return Err(ControllerError::Config("PD gains must be positive"));
        }
        Ok(())
    }
}

/// Internal controller state.
#[derive(Debug, Clone)]
pub struct FsmState {
    pub mode: Phase,
    pub sketch: Option<MotionSketch>,
    pub last_srb: Option<MpcSolution>,
    pub last_kino: Option<MpcSolution>,
    pub swing: Option<SwingPlan>,
    pub schedule: Vec<HorizonStep>,
    /// Last SRB problem, kept for offline reproduction.
    pub last_srb_qp: Option<QpProblem>,
    /// Apex of the current flight already processed.
    pub apex_done: bool,
    pub alpha: f64,
}

/// Per-tick record for the run log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickTelemetry {
    pub time: f64,
    pub mode: Phase,
    pub solved: bool,
    pub srb_iterations: usize,
    pub srb_status: Option<QpStatus>,
    pub kino_iterations: usize,
    pub kino_status: Option<QpStatus>,
    pub max_violation: f64,
    pub objective: f64,
    pub degraded: bool,
    pub ik_clamped: bool,
    pub released: bool,
    pub planned_grf: Vec2,
    pub apex: Option<ApexEvent>,
    pub alpha: f64,
}

impl TickTelemetry {
    fn new(time: f64, mode: Phase, alpha: f64) -> Self {
        Self {
            time,
            mode,
            solved: false,
            srb_iterations: 0,
            srb_status: None,
            kino_iterations: 0,
            kino_status: None,
            max_violation: 0.0,
            objective: 0.0,
            degraded: false,
            ik_clamped: false,
            released: false,
            planned_grf: Vec2::zeros(),
            apex: None,
            alpha,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickOutput {
    pub command: ActuationCommand,
    pub telemetry: TickTelemetry,
}

#[derive(Debug, Clone)]
pub struct Controller {
    pub config: ControllerConfig,
    pub constants: RobotConstants,
    pub geometry: LegGeometry,
    pub ups: UpsModel,
    pub library: GaitLibrary,
    slip: SlipParams,
    srb: SrbMpc,
    kino: KinoMpc,
    fsm: FsmState,
}

impl Controller {
    pub fn new(
        constants: RobotConstants,
        geometry: LegGeometry,
        ups: UpsModel,
        library: GaitLibrary,
        config: ControllerConfig,
    ) -> Result<Self, ControllerError> {
        config.validate()?;
        if library.entries.is_empty() {
            return Err(ControllerError::Config("empty gait library"));
        }
        Ok(Self {
            slip: library.params,
            srb: SrbMpc::new(config.srb_solver),
            kino: KinoMpc::new(config.sqp)?,
            fsm: FsmState {
                mode: Phase::Flight,
                sketch: None,
                last_srb: None,
                last_kino: None,
                swing: None,
                schedule: Vec::new(),
                last_srb_qp: None,
                apex_done: false,
                alpha: 0.0,
            },
            config,
            constants,
            geometry,
            ups,
            library,
        })
    }

    pub fn fsm(&self) -> &FsmState {
        &self.fsm
    }

    /// One control tick.
    pub fn tick(&mut self, plant: &PlantState, desired_speed: f64) -> Result<TickOutput, ControllerError> {
        if plant.phase != self.fsm.mode || (plant.phase == Phase::Flight && self.fsm.swing.is_none()) {
            match plant.phase {
                Phase::Stance => self.on_touchdown(plant, desired_speed)?,
                Phase::Flight => self.on_liftoff(plant, desired_speed)?,
            }
        }
        let mut tel = TickTelemetry::new(plant.time, plant.phase, self.fsm.alpha);
        let command = match plant.phase {
            Phase::Flight => self.flight_tick(plant, desired_speed, &mut tel)?,
            Phase::Stance => self.stance_tick(plant, &mut tel)?,
        };
        let command = match command {
            ActuationCommand::Torque(t) => ActuationCommand::Torque(self.constants.clamp_torque(t)),
            pd => pd,
        };
        tel.alpha = self.fsm.alpha;
        Ok(TickOutput { command, telemetry: tel })
    }

    fn touchdown_height(&self, alpha: f64) -> f64 {
        self.slip.rest_length * alpha.cos()
    }

    /// Time until the CoM falls to `z_td` on the current ballistic arc.
    fn time_to_touchdown(&self, plant: &PlantState, z_td: f64) -> f64 {
        let g = self.slip.gravity;
        let (z, vz) = (plant.robot.p_c.y, plant.robot.v_c.y);
        let disc = vz * vz + 2.0 * g * (z - z_td);
        if disc <= 0.0 {
            return 0.0;
        }
        ((vz + disc.sqrt()) / g).max(0.0)
    }

    fn foot_relative(&self, plant: &PlantState) -> Vec2 {
        let r = &plant.robot;
        self.geometry.forward_kinematics(&r.p_c, r.theta, &r.q) - r.p_c
    }

    fn touchdown_target(&self, alpha: f64) -> Vec2 {
        let r0 = self.slip.rest_length;
        Vec2::new(r0 * alpha.sin(), -r0 * alpha.cos())
    }

    fn on_liftoff(&mut self, plant: &PlantState, desired_speed: f64) -> Result<(), ControllerError> {
        let entry = self.library.query(desired_speed)?;
        self.fsm.mode = Phase::Flight;
        self.fsm.apex_done = false;
        self.fsm.alpha = entry.alpha;
        self.fsm.last_srb = None;
        self.fsm.last_kino = None;
        self.srb.reset();
        self.kino.reset();
        self.fsm.swing = Some(self.plan_swing(plant, self.foot_relative(plant), entry.alpha)?);
        Ok(())
    }

    fn on_touchdown(&mut self, plant: &PlantState, desired_speed: f64) -> Result<(), ControllerError> {
        let entry = self.library.query(desired_speed)?;
        let energy = self.slip.apex_energy(&entry.apex);
        let r = &plant.robot;
        let sketch = stance_sketch(
            &SlipState { p: r.p_c, v: r.v_c },
            &plant.stance_foot,
            &self.slip,
            self.config.sketch_dt,
            plant.time,
            Some(energy),
        )?;
        self.fsm.mode = Phase::Stance;
        self.fsm.sketch = Some(sketch);
        self.fsm.swing = None;
        self.srb.reset();
        self.kino.reset();
        Ok(())
    }

    fn flight_tick(
        &mut self,
        plant: &PlantState,
        desired_speed: f64,
        tel: &mut TickTelemetry,
    ) -> Result<ActuationCommand, ControllerError> {
        let r = &plant.robot;
        let g = self.slip.gravity;
        if !self.fsm.apex_done && r.v_c.y <= 0.0 {
            // flight is ballistic, so the apex follows from the current state
            let back = r.v_c.y / g;
            let apex = ApexEvent {
                time: plant.time + back,
                apex: ApexState::new(r.p_c.y + r.v_c.y * r.v_c.y / (2.0 * g), r.v_c.x),
                x: r.p_c.x + r.v_c.x * back,
            };
            self.on_apex(plant, &apex, desired_speed)?;
            tel.apex = Some(apex);
        }
        let plan = self.fsm.swing.expect("swing plan exists in flight");
        let rel = plan.sample(plant.time);
        let (q_des, clamped) = self.geometry.inverse_kinematics_clamped(&r.p_c, r.theta, &(r.p_c + rel));
        tel.ik_clamped = clamped;
        let q_des = Vec2::new(
            q_des.x.clamp(self.constants.q_min.x, self.constants.q_max.x),
            q_des.y.clamp(self.constants.q_min.y, self.constants.q_max.y),
        );
        Ok(ActuationCommand::Pd {
            q_des,
            kp: self.config.gains.kp,
            kd: self.config.gains.kd,
            feedforward: -self.ups.torque_vec(&r.q),
        })
    }

    fn on_apex(&mut self, plant: &PlantState, apex: &ApexEvent, desired_speed: f64) -> Result<(), ControllerError> {
        let entry = self.library.query(desired_speed)?;
        let energy = self.slip.apex_energy(&entry.apex);
        let mut alpha = entry.feedback_alpha(&apex.apex);
        let sketch = match generate_motion_sketch(
            &apex.apex,
            alpha,
            &self.slip,
            self.config.sketch_dt,
            apex.time,
            apex.x,
            Some(energy),
        ) {
            Ok(s) => s,
            Err(_) => {
                alpha = entry.alpha;
                generate_motion_sketch(&apex.apex, alpha, &self.slip, self.config.sketch_dt, apex.time, apex.x, Some(energy))?
            }
        };
        self.fsm.sketch = Some(sketch);
        self.fsm.alpha = alpha;
        self.fsm.apex_done = true;
        let from = match &self.fsm.swing {
            Some(p) => p.sample(plant.time),
            None => self.foot_relative(plant),
        };
        self.fsm.swing = Some(self.plan_swing(plant, from, alpha)?);
        Ok(())
    }

    /// Swing from `from` (CoM frame) to the touchdown pose for `alpha`.
    /// Clearance is measured from the ground: the lifted control points sit
    /// `clearance` above the ground under the CoM predicted at mid-swing.
    fn plan_swing(&self, plant: &PlantState, from: Vec2, alpha: f64) -> Result<SwingPlan, ControllerError> {
        let t_td = self.time_to_touchdown(plant, self.touchdown_height(alpha));
        let duration = (self.config.swing_fraction * t_td).max(self.config.control_dt);
        let target = self.touchdown_target(alpha);
        let tm = 0.5 * duration;
        let (z, vz) = (plant.robot.p_c.y, plant.robot.v_c.y);
        let h_mid = z + vz * tm - 0.5 * self.slip.gravity * tm * tm;
        let reach = 0.95 * self.geometry.max_reach();
        let top = (self.config.clearance - h_mid).max(-reach);
        let lift = top - from.y.max(target.y);
        swing_trajectory(&from, &target, plant.time, duration, lift)
    }

    /// Zero net joint torque: the motor cancels the spring and the GRF vanishes.
    fn release(&self, plant: &PlantState, tel: &mut TickTelemetry) -> ActuationCommand {
        tel.released = true;
        ActuationCommand::Torque(-self.ups.torque_vec(&plant.robot.q))
    }

    fn stance_tick(&mut self, plant: &PlantState, tel: &mut TickTelemetry) -> Result<ActuationCommand, ControllerError> {
        let t = plant.time;
        let sketch = self.fsm.sketch.clone().expect("sketch exists in stance");
        let n = self.config.weights.horizon;
        let dt = self.config.horizon_span / n as f64;
        // the held torque would outlive the sketched stance
        if sketch.liftoff_time <= t + self.config.control_dt {
            return Ok(self.release(plant, tel));
        }
        let schedule = ContactSchedule {
            initial_contact: true,
            events: alloc::vec![sketch.liftoff_time],
        };
        let steps = segment_timesteps(t, dt, &schedule, n)?;
        let reference = SrbReference {
            foot: plant.stance_foot,
            ..SrbReference::from_sketch(&sketch, &steps)
        };
        self.fsm.schedule = steps;
        let x0 = SrbState::from_robot(&plant.robot).to_vector();
        let model = crate::srb_mpc::SrbModel::from(&self.constants);
        let qp = build_srb_qp(&reference, &x0, &self.config.weights, &model, self.config.discretization)?;
        let srb = self.srb.solve(&qp, &reference, &self.config.weights)?;
        tel.srb_iterations = srb.iterations;
        tel.srb_status = Some(srb.status);
        tel.objective = srb.objective;
        tel.solved = true;
        self.fsm.last_srb_qp = Some(qp.problem);

        let r = &plant.robot;
        let mut f = srb.grfs[0];
        if !self.config.srb_only {
            let kp = KinoProblem::new(
                &reference,
                &x0,
                &self.config.weights,
                &self.constants,
                &self.geometry,
                &self.ups,
                self.config.discretization,
            )?;
            let kino = self.kino.solve(&kp, &srb)?;
            tel.kino_iterations = kino.iterations;
            tel.kino_status = Some(kino.status);
            tel.max_violation = kino.max_violation;
            tel.ik_clamped = kino.ik_clamped;
            tel.objective = kino.objective;
            if kino.usable() {
                let tau = torque_extraction(&kino, &self.constants.tau_max)?;
                f = self
                    .geometry
                    .grf_for_joint_torque(r.theta, &r.q, &(tau + self.ups.torque_vec(&r.q)))
                    .unwrap_or(kino.grfs[0]);
                self.fsm.last_kino = Some(kino);
            } else {
                tel.degraded = true;
                if let Some(prev) = &self.fsm.last_kino {
                    if prev.grfs.len() > 1 {
                        f = prev.grfs[1];
                    }
                }
            }
        }
        self.fsm.last_srb = Some(srb);
        if self.config.intra_step_shaping {
            // f_0 is a mean over the first horizon step; the sketch supplies the profile inside it
            let dt0 = self.fsm.schedule[0].dt;
            f += sketch.mean_grf(t, t + self.config.control_dt) - sketch.mean_grf(t, t + dt0);
        }

        // late in the sketched stance a vanishing force hands over to flight
        let stance_mid = 0.5 * (sketch.touchdown_time + sketch.liftoff_time);
        if t > stance_mid && f.y < self.config.min_normal_force {
            return Ok(self.release(plant, tel));
        }
        let fz = f.y.max(self.config.min_normal_force);
        let lim = self.config.friction_margin * self.constants.friction * fz;
        let f = Vec2::new(f.x.clamp(-lim, lim), fz);
        tel.planned_grf = f;
        // the joints keep moving while the torque is held, so map f at a few
        // points of the tick and keep the torque whose force stays in the cone
        let mut best = (f64::NEG_INFINITY, Vec2::zeros(), 0.0);
        for s in [0.0, 0.5, 1.0] {
            let (theta, q) = self.predicted_pose(plant, s * self.config.control_dt);
            let tau = self.constants.clamp_torque(self.geometry.motor_torque_for_grf(theta, &q, &f, &self.ups));
            let (margin, fz) = self.worst_cone_margin(plant, &tau);
            if margin > best.0 {
                best = (margin, tau, fz);
            }
        }
        if (best.0 < 0.0 || best.2 < self.config.release_normal_force) && t > stance_mid {
            return Ok(self.release(plant, tel));
        }
        Ok(ActuationCommand::Torque(best.1))
    }

    /// Pitch and joint angles `h` seconds ahead at the current rates.
    fn predicted_pose(&self, plant: &PlantState, h: f64) -> (f64, Vec2) {
        let r = &plant.robot;
        (r.theta + r.theta_dot * h, r.q + r.qdot * h)
    }

    /// Smallest `mu f_z - |f_x|` and smallest `f_z` over the tick under a held torque.
    fn worst_cone_margin(&self, plant: &PlantState, tau: &Vec2) -> (f64, f64) {
        let mu = self.constants.friction;
        let (mut margin, mut fz) = (f64::INFINITY, f64::INFINITY);
        for i in 0..=4 {
            let (theta, q) = self.predicted_pose(plant, 0.25 * i as f64 * self.config.control_dt);
            match self.geometry.grf_for_joint_torque(theta, &q, &(tau + self.ups.torque_vec(&q))) {
                Some(g) => {
                    margin = margin.min(mu * g.y - g.x.abs());
                    fz = fz.min(g.y);
                }
                None => return (f64::NEG_INFINITY, f64::NEG_INFINITY),
            }
        }
        (margin, fz)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pd_examples() {
        let g = PdGains::default();
        let q = Vec2::new(0.3, -1.2);
        assert_eq!(swing_pd(&q, &q, &Vec2::zeros(), &g), Vec2::zeros());
        assert_eq!(swing_pd(&(q + Vec2::new(1.0, 1.0)), &q, &Vec2::zeros(), &g), Vec2::new(40.0, 40.0));
        assert_eq!(swing_pd(&q, &q, &Vec2::new(2.0, 0.0), &g), Vec2::new(-1.0, 0.0));
    }

    #[test]
    fn bezier_endpoints_and_clearance() {
        let a = Vec2::new(-0.1, -0.3);
        let b = Vec2::new(0.12, -0.29);
        let c = swing_curve(&a, &b, 0.08);
        assert_eq!(c.sample(0.0), a);
        assert_eq!(c.sample(1.0), b);
        let top = (0..=1000).map(|i| c.sample(i as f64 / 1000.0).y).fold(f64::MIN, f64::max);
        assert!(top >= a.y.max(b.y) + 0.5 * 0.08);
    }

    #[test]
    fn flat_curve_stays_on_segment() {
        let a = Vec2::new(-0.1, -0.3);
        let b = Vec2::new(0.2, -0.3);
        let c = swing_curve(&a, &b, 0.0);
        for i in 0..=100 {
            let p = c.sample(i as f64 / 100.0);
            assert!((p.y + 0.3).abs() < 1e-12);
            assert!(p.x >= a.x - 1e-12 && p.x <= b.x + 1e-12);
        }
    }

    #[test]
    fn no_events_gives_uniform_grid() {
        let s = segment_timesteps(1.0, 0.04, &ContactSchedule { initial_contact: true, events: alloc::vec![] }, 10).unwrap();
        assert_eq!(s.len(), 10);
        for (k, st) in s.iter().enumerate() {
            assert!((st.t - (1.0 + 0.04 * k as f64)).abs() < 1e-15);
            assert!((st.dt - 0.04).abs() < 1e-12);
            assert!(st.contact);
        }
    }

    #[test]
    fn aligned_event_keeps_grid() {
        let uni = segment_timesteps(0.0, 0.05, &ContactSchedule { initial_contact: true, events: alloc::vec![] }, 10).unwrap();
        let s = segment_timesteps(0.0, 0.05, &ContactSchedule { initial_contact: true, events: alloc::vec![0.15] }, 10).unwrap();
        for (a, b) in uni.iter().zip(&s) {
            assert!((a.t - b.t).abs() < 1e-15 && (a.dt - b.dt).abs() < 1e-15);
        }
        assert!(s[2].contact && !s[3].contact);
    }

    #[test]
    fn too_many_events_is_an_error() {
        let ev: Vec<f64> = (1..=10).map(|i| i as f64 * 0.0099).collect();
        let r = segment_timesteps(0.0, 0.01, &ContactSchedule { initial_contact: false, events: ev }, 10);
        assert!(matches!(r, Err(ControllerError::TooManyEvents { .. })));
    }

    /// Every strictly increasing choice of interior boundaries.
    fn brute_force(n: usize, dt: f64, events: &[f64]) -> f64 {
        fn rec(start: usize, n: usize, dt: f64, ev: &[f64], acc: f64, best: &mut f64) {
            if ev.is_empty() {
                *best = best.min(acc);
                return;
            }
            for i in start..n {
                rec(i + 1, n, dt, &ev[1..], acc + (i as f64 * dt - ev[0]).abs(), best);
            }
        }
        let mut best = f64::INFINITY;
        rec(1, n, dt, events, 0.0, &mut best);
        best
    }

    #[test]
    fn single_event_matches_brute_force() {
        let span = 0.45;
        let e = 0.37 * span;
        let s = segment_timesteps(0.0, span / 10.0, &ContactSchedule { initial_contact: true, events: alloc::vec![e] }, 10).unwrap();
        assert!(s.iter().any(|st| st.t == e));
        assert!(s.iter().all(|st| st.dt > 0.0));
        let moved: f64 = s.iter().enumerate().map(|(k, st)| (st.t - k as f64 * span / 10.0).abs()).sum();
        assert!((moved - brute_force(10, span / 10.0, &[e])).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn segmentation_is_exact_and_optimal(
            raw in proptest::collection::vec(0.001..0.999f64, 0..4),
            n in 5usize..12,
            initial in any::<bool>(),
        ) {
            let dt = 0.045;
            let span = n as f64 * dt;
            let mut ev: Vec<f64> = raw.iter().map(|r| r * span).collect();
            ev.sort_by(f64::total_cmp);
            ev.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
            let s = segment_timesteps(0.0, dt, &ContactSchedule { initial_contact: initial, events: ev.clone() }, n).unwrap();
            prop_assert_eq!(s.len(), n);
            let total: f64 = s.iter().map(|st| st.dt).sum();
            prop_assert!((total - span).abs() < 1e-12);
            prop_assert!(s.iter().all(|st| st.dt > 0.0));
            for e in &ev {
                prop_assert!(s.iter().any(|st| st.t == *e));
            }
            let moved: f64 = s.iter().enumerate().map(|(k, st)| (st.t - k as f64 * dt).abs()).sum();
            prop_assert!((moved - brute_force(n, dt, &ev)).abs() < 1e-9);
            // contact toggles exactly at the events
            for st in &s {
                let mid = st.t + 0.5 * st.dt;
                let flips = ev.iter().filter(|&&e| e < mid).count();
                prop_assert_eq!(st.contact, initial ^ (flips % 2 == 1));
            }
            // steps not touching an event stay near nominal
            for st in &s {
                let touches = ev.iter().any(|&e| e == st.t || e == st.t + st.dt || (st.t + st.dt - e).abs() < 1e-12);
                if !touches {
                    prop_assert!(st.dt >= 0.5 * dt - 1e-12 && st.dt <= 1.5 * dt + 1e-12);
                }
            }
        }
    }
}
