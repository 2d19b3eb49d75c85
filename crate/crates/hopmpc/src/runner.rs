//! Closed-loop runs of controller and plant.
//!
//! The plant advances in steps of at most `plant_dt`; the controller ticks
//! every `control_dt` and once more right after every contact event, so a
//! stance command never acts in flight or the other way round.

use std::time::Instant;

use hopmpc_core::controller::{Controller, ControllerConfig, ControllerError, TickTelemetry};
use hopmpc_core::energy::{cost_of_transport, power_sample, torque_stats, EnergyAccumulator, MotorModel, TorqueStats};
use hopmpc_core::plant::{detect_apex, ActuationCommand, Phase, Plant, PlantError, PlantSettings, PlantState};
use hopmpc_core::qp::{QpProblem, QpStatus};
use hopmpc_core::slip::GaitLibrary;
use hopmpc_core::{LegGeometry, RobotConstants, RobotState, UpsModel, Vec2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ExperimentConfig, ProfileSegment};
use crate::runlog::{ApexRow, LogRow, TickRow};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("empty run: the velocity profile has zero total duration")]
    EmptyRun,
    #[error("tick {tick} (t = {time:.4} s): plant fault: {source}")]
    Plant {
        tick: u64,
        time: f64,
        source: PlantError,
    },
    #[error("tick {tick} (t = {time:.4} s): controller error: {source}")]
    Controller {
        tick: u64,
        time: f64,
        source: ControllerError,
    },
    #[error("tick {tick} (t = {time:.4} s): MPC degraded for {count} consecutive ticks")]
    Degraded { tick: u64, time: f64, count: usize },
    #[error("controller setup: {0}")]
    Setup(ControllerError),
}

/// When a run ends and which part of it is metered.
#[derive(Debug, Clone, PartialEq)]
pub enum StopRule {
    /// Follow a piecewise-constant speed profile; the whole run is metered.
    Profile(Vec<ProfileSegment>),
    /// Hold `speed`. Metering starts at the apex that completes
    /// `settle_apexes` consecutive apexes within `tolerance` of it and covers
    /// the next `hops` apex-to-apex hops.
    Steady {
        speed: f64,
        hops: usize,
        settle_apexes: usize,
        tolerance: f64,
        max_apexes: usize,
    },
}

impl StopRule {
    fn speed_at(&self, t: f64) -> f64 {
        match self {
            StopRule::Profile(segs) => {
                let mut end = 0.0;
                for s in segs {
                    end += s.duration;
                    if t < end {
                        return s.speed;
                    }
                }
                segs.last().map_or(0.0, |s| s.speed)
            }
            StopRule::Steady { speed, .. } => *speed,
        }
    }
}

/// Everything a run needs besides the gait library.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSetup {
    pub constants: RobotConstants,
    pub geometry: LegGeometry,
    pub ups: UpsModel,
    pub motor: MotorModel,
    pub controller: ControllerConfig,
    pub plant_settings: PlantSettings,
    pub plant_dt: f64,
    pub drop_height: f64,
    pub perturbation: f64,
    pub seed: u64,
    pub max_degraded_ticks: usize,
}

impl RunSetup {
    pub fn from_config(cfg: &ExperimentConfig, ups_on: bool) -> Result<Self, crate::config::ConfigFileError> {
        Ok(Self {
            constants: cfg.constants()?,
            geometry: cfg.geometry(),
            ups: cfg.ups(ups_on),
            motor: cfg.motor(),
            controller: cfg.controller_config(),
            plant_settings: cfg.plant_settings(),
            plant_dt: cfg.plant.dt,
            drop_height: cfg.run.drop_height,
            perturbation: cfg.perturbation,
            seed: cfg.seed,
            max_degraded_ticks: cfg.run.max_degraded_ticks,
        })
    }

    /// Drop from rest with the leg at its rest length under the hip. A seeded
    /// perturbation of height, forward speed and pitch distinguishes seeds.
    pub fn initial_state(&self) -> PlantState {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let a = self.perturbation;
        let dh = a * rng.gen_range(-0.01..=0.01);
        let dv = a * rng.gen_range(-0.05..=0.05);
        let dth = a * rng.gen_range(-0.02..=0.02);
        let p = Vec2::new(0.0, self.drop_height + dh);
        let r0 = self.constants.rest_length;
        let (q, _) = self.geometry.inverse_kinematics_clamped(&p, dth, &(p + Vec2::new(0.0, -r0)));
        PlantState {
            robot: RobotState {
                p_c: p,
                v_c: Vec2::new(dv, 0.0),
                theta: dth,
                q,
                ..Default::default()
            },
            phase: Phase::Flight,
            stance_foot: Vec2::zeros(),
            time: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTorqueStats {
    pub mean_abs: f64,
    pub std_abs: f64,
    pub lower_quartile: f64,
    pub median: f64,
    pub upper_quartile: f64,
    pub peak: f64,
}

impl From<TorqueStats> for JointTorqueStats {
    fn from(s: TorqueStats) -> Self {
        Self {
            mean_abs: s.mean_abs,
            std_abs: s.std_abs,
            lower_quartile: s.lower_quartile,
            median: s.median,
            upper_quartile: s.upper_quartile,
            peak: s.peak,
        }
    }
}

/// Summary record written next to the logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub ups: bool,
    pub sim_time: f64,
    pub ticks: u64,
    /// Whether the metered window was reached (always true for profiles).
    pub settled: bool,
    pub measured_hops: usize,
    pub measured_time: f64,
    pub energy: f64,
    pub distance: f64,
    pub cost_of_transport: Option<f64>,
    pub hop_frequency: Option<f64>,
    pub mean_apex_speed: Option<f64>,
    pub max_abs_pitch: f64,
    pub degraded_ticks: u64,
    /// Degraded ticks inside the metered window.
    pub degraded_measured: u64,
    pub released_ticks: u64,
    pub median_stance_tick_us: Option<f64>,
    /// Stance torque statistics `[hip, knee]` over the metered window.
    pub torque: Option<[JointTorqueStats; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub log: Vec<LogRow>,
    pub ticks: Vec<TickRow>,
    pub apexes: Vec<ApexRow>,
    pub summary: RunSummary,
    /// Last SRB problem posed by the controller.
    pub last_srb_qp: Option<QpProblem>,
}

fn status(s: Option<QpStatus>) -> String {
    s.map_or_else(String::new, |s| format!("{s:?}"))
}

fn tick_row(tick: u64, tel: &TickTelemetry, wall_us: f64) -> TickRow {
    TickRow {
        tick,
        t: tel.time,
        stance: tel.mode == Phase::Stance,
        solved: tel.solved,
        srb_iterations: tel.srb_iterations as u64,
        srb_status: status(tel.srb_status),
        kino_iterations: tel.kino_iterations as u64,
        kino_status: status(tel.kino_status),
        max_violation: tel.max_violation,
        objective: tel.objective,
        degraded: tel.degraded,
        ik_clamped: tel.ik_clamped,
        released: tel.released,
        planned_fx: tel.planned_grf.x,
        planned_fz: tel.planned_grf.y,
        alpha: tel.alpha,
        wall_us,
    }
}

fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Hard stop for steady runs that never settle, in addition to `max_apexes`.
const MAX_STEADY_TIME: f64 = 60.0;

pub fn run(setup: &RunSetup, library: &GaitLibrary, rule: &StopRule) -> Result<RunOutput, RunError> {
    let horizon_end = match rule {
        StopRule::Profile(segs) => {
            let total: f64 = segs.iter().map(|s| s.duration).sum();
            if !(total > 0.0) {
                return Err(RunError::EmptyRun);
            }
            total
        }
        StopRule::Steady { .. } => MAX_STEADY_TIME,
    };
    let mut ctl = Controller::new(setup.constants, setup.geometry, setup.ups, library.clone(), setup.controller)
        .map_err(RunError::Setup)?;
    let mut plant = Plant::new(setup.constants, setup.geometry, setup.ups);
    plant.settings = setup.plant_settings;
    let g = setup.constants.g();
    let control_dt = setup.controller.control_dt;

    let mut s = setup.initial_state();
    let mut log = Vec::new();
    let mut ticks = Vec::new();
    let mut apexes: Vec<ApexRow> = Vec::new();
    let mut acc = EnergyAccumulator::new();
    let mut stance_tau: Vec<Vec2> = Vec::new();
    let mut stance_walls = Vec::new();

    let metering_all = matches!(rule, StopRule::Profile(_));
    let mut metering = metering_all;
    let mut window: Option<(f64, usize)> = None; // (start time, index of the starting apex)
    let mut settled_streak = 0;
    let mut done = false;

    let mut tick: u64 = 0;
    let mut next_tick = 0.0;
    let mut cmd: Option<ActuationCommand> = None;
    let mut degraded_streak = 0;
    let (mut degraded_ticks, mut degraded_measured, mut released_ticks) = (0u64, 0u64, 0u64);
    let mut max_pitch = 0.0f64;
    if metering {
        acc.add(0.0, 0.0, s.robot.p_c.x);
    }

    while s.time < horizon_end - 1e-12 && !done {
        let v_des = rule.speed_at(s.time);
        if cmd.is_none() || s.time >= next_tick - 1e-12 {
            tick = ticks.len() as u64;
            let start = Instant::now();
            let out = ctl.tick(&s, v_des).map_err(|source| RunError::Controller {
                tick,
                time: s.time,
                source,
            })?;
            let wall_us = start.elapsed().as_secs_f64() * 1e6;
            let tel = out.telemetry;
            if tel.mode == Phase::Stance && tel.solved {
                stance_walls.push(wall_us);
            }
            if tel.degraded {
                degraded_ticks += 1;
                degraded_measured += metering as u64;
                degraded_streak += 1;
                if degraded_streak > setup.max_degraded_ticks {
                    return Err(RunError::Degraded {
                        tick,
                        time: s.time,
                        count: degraded_streak,
                    });
                }
            } else if tel.mode == Phase::Stance {
                degraded_streak = 0;
            }
            released_ticks += tel.released as u64;
            ticks.push(tick_row(tick, &tel, wall_us));
            cmd = Some(out.command);
            if s.time >= next_tick - 1e-12 {
                next_tick += control_dt;
            }
        }
        let dt = (next_tick - s.time).min(setup.plant_dt).min(horizon_end - s.time);
        let command = cmd.expect("command set above");
        let o = plant.step(&s, &command, dt).map_err(|source| RunError::Plant {
            tick,
            time: s.time,
            source,
        })?;
        let prev = s;
        s = o.state;
        max_pitch = max_pitch.max(s.robot.theta.abs());
        if o.event.is_some() {
            cmd = None;
        }

        let p = power_sample(&o.tau, &s.robot.qdot, &setup.motor);
        let mut closed = false;
        if let Some(a) = detect_apex(&prev, &s, g) {
            apexes.push(ApexRow {
                t: a.time,
                x: a.x,
                height: a.apex.height,
                velocity: a.apex.velocity,
                v_des,
                pitch: prev.robot.theta,
            });
            if let StopRule::Steady {
                speed,
                hops,
                settle_apexes,
                tolerance,
                max_apexes,
            } = rule
            {
                let idx = apexes.len() - 1;
                match window {
                    None => {
                        if (a.apex.velocity - speed).abs() <= *tolerance {
                            settled_streak += 1;
                        } else {
                            settled_streak = 0;
                        }
                        if settled_streak >= *settle_apexes {
                            window = Some((a.time, idx));
                            metering = true;
                            acc.add(a.time, p, a.x);
                        } else if apexes.len() >= *max_apexes {
                            done = true;
                        }
                    }
                    Some((_, start)) => {
                        if idx - start >= *hops {
                            acc.add(a.time, p, a.x);
                            done = true;
                            closed = true;
                        }
                    }
                }
            }
        }

        let in_window = metering && !closed;
        if in_window {
            acc.add(s.time, p, s.robot.p_c.x);
            if s.phase == Phase::Stance {
                stance_tau.push(o.tau);
            }
        }
        log.push(LogRow {
            seed: setup.seed,
            ups: setup.ups.enabled,
            tick,
            t: s.time,
            stance: s.phase == Phase::Stance,
            px: s.robot.p_c.x,
            pz: s.robot.p_c.y,
            theta: s.robot.theta,
            vx: s.robot.v_c.x,
            vz: s.robot.v_c.y,
            theta_dot: s.robot.theta_dot,
            q_hip: s.robot.q.x,
            q_knee: s.robot.q.y,
            qd_hip: s.robot.qdot.x,
            qd_knee: s.robot.qdot.y,
            tau_hip: o.tau.x,
            tau_knee: o.tau.y,
            tau_spring: setup.ups.torque(s.robot.q.y),
            fx: o.grf.x,
            fz: o.grf.y,
            power: p,
            v_des,
            measured: in_window,
        });
    }

    let (settled, measured_hops, hop_frequency, mean_apex_speed) = match (rule, window) {
        (StopRule::Steady { .. }, Some((t0, start))) => {
            let last = apexes.len() - 1;
            let hops = last - start;
            let span = apexes[last].t - t0;
            let speeds = &apexes[start + 1..=last];
            let mean = (!speeds.is_empty()).then(|| speeds.iter().map(|a| a.velocity).sum::<f64>() / speeds.len() as f64);
            (hops > 0, hops, (hops > 0 && span > 0.0).then(|| hops as f64 / span), mean)
        }
        (StopRule::Steady { .. }, None) => (false, 0, None, None),
        (StopRule::Profile(_), _) => {
            let n = apexes.len().saturating_sub(1);
            let f = (n > 0).then(|| n as f64 / (apexes[n].t - apexes[0].t));
            (true, n, f, None)
        }
    };
    let torque = torque_stats(stance_tau.iter().map(|t| (t, true)))
        .ok()
        .map(|[h, k]| [h.into(), k.into()]);
    let summary = RunSummary {
        seed: setup.seed,
        ups: setup.ups.enabled,
        sim_time: s.time,
        ticks: ticks.len() as u64,
        settled,
        measured_hops,
        measured_time: acc.duration,
        energy: acc.total_positive_energy,
        distance: acc.distance,
        cost_of_transport: cost_of_transport(&acc, setup.constants.mass, g).ok(),
        hop_frequency,
        mean_apex_speed,
        max_abs_pitch: max_pitch,
        degraded_ticks,
        degraded_measured,
        released_ticks,
        median_stance_tick_us: median(&mut stance_walls),
        torque,
    };
    Ok(RunOutput {
        log,
        ticks,
        apexes,
        summary,
        last_srb_qp: ctl.fsm().last_srb_qp.clone(),
    })
}

/// Per-segment convergence of a profile run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentTracking {
    pub speed: f64,
    pub apexes: usize,
    /// Smallest `k` such that the `k`-th apex after the step and every later
    /// apex of the segment lie within the tolerance.
    pub hops_to_converge: Option<usize>,
    /// Largest error over the converged apexes.
    pub steady_error: Option<f64>,
}

pub fn segment_tracking(apexes: &[ApexRow], profile: &[ProfileSegment], tolerance: f64) -> Vec<SegmentTracking> {
    let mut start = 0.0;
    profile
        .iter()
        .map(|seg| {
            let end = start + seg.duration;
            let inside: Vec<&ApexRow> = apexes.iter().filter(|a| a.t > start && a.t <= end).collect();
            start = end;
            let errs: Vec<f64> = inside.iter().map(|a| (a.velocity - seg.speed).abs()).collect();
            let first_ok = (0..errs.len()).find(|&k| errs[k..].iter().all(|e| *e <= tolerance));
            SegmentTracking {
                speed: seg.speed,
                apexes: inside.len(),
                hops_to_converge: first_ok.map(|k| k + 1),
                steady_error: first_ok.map(|k| errs[k..].iter().copied().fold(0.0, f64::max)),
            }
        })
        .collect()
}
