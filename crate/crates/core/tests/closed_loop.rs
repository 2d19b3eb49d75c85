use hopmpc_core::controller::{Controller, ControllerConfig, TickTelemetry};
use hopmpc_core::plant::{Phase, Plant, PlantState};
use hopmpc_core::slip::{build_gait_library, LibraryOptions, SlipParams, SpeedGrid};
use hopmpc_core::{LegGeometry, RobotConstants, RobotState, UpsModel, Vec2};

struct Trace {
    ticks: Vec<(PlantState, TickTelemetry)>,
    max_abs_tau: Vec2,
    max_abs_pitch: f64,
}

fn start_state(geometry: &LegGeometry, height: f64) -> PlantState {
    let p = Vec2::new(0.0, height);
    let (q, _) = geometry.inverse_kinematics_clamped(&p, 0.0, &(p + Vec2::new(0.0, -0.32)));
    PlantState {
        robot: RobotState { p_c: p, q, ..Default::default() },
        phase: Phase::Flight,
        stance_foot: Vec2::zeros(),
        time: 0.0,
    }
}

/// Closed loop with a 5 ms controller tick, re-ticking on contact events.
fn hop(v_des: f64, ups: UpsModel, duration: f64) -> Trace {
    let constants = RobotConstants::default();
    let geometry = LegGeometry::default();
    let opts = LibraryOptions {
        grid: SpeedGrid { min: 0.0, max: 1.5, step: 0.1 },
        ..Default::default()
    };
    let lib = build_gait_library(&SlipParams::from(&constants), &opts).unwrap();
    let mut ctl = Controller::new(constants, geometry, ups, lib, ControllerConfig::default()).unwrap();
    let plant = Plant::new(constants, geometry, ups);
    let mut s = start_state(&geometry, 0.45);
    let mut trace = Trace { ticks: Vec::new(), max_abs_tau: Vec2::zeros(), max_abs_pitch: 0.0 };
    let mut next_tick = 0.0;
    let mut cmd = None;
    while s.time < duration {
        let due = s.time >= next_tick - 1e-12;
        if cmd.is_none() || due {
            let out = ctl.tick(&s, v_des).unwrap();
            trace.ticks.push((s.clone(), out.telemetry));
            cmd = Some(out.command);
            if due {
                next_tick += 0.005;
            }
        }
        let dt = (next_tick - s.time).min(1e-3);
        let o = plant.step(&s, cmd.as_ref().unwrap(), dt).unwrap();
        trace.max_abs_tau = trace.max_abs_tau.zip_map(&o.tau, |m, t| m.max(t.abs()));
        trace.max_abs_pitch = trace.max_abs_pitch.max(o.state.robot.theta.abs());
        if o.event.is_some() {
            cmd = None;
        }
        s = o.state;
    }
    trace
}

fn apex_speeds(trace: &Trace) -> Vec<f64> {
    trace.ticks.iter().filter_map(|(_, t)| t.apex.map(|a| a.apex.velocity)).collect()
}

#[test]
fn forward_hopping_settles_on_commanded_speed() {
    let trace = hop(1.0, UpsModel::default(), 4.0);
    let v = apex_speeds(&trace);
    assert!(v.len() >= 6, "only {} apexes", v.len());
    let first = v.iter().position(|s| (s - 1.0).abs() <= 0.1).expect("never within 0.1 m/s");
    assert!(first <= 4, "apex speeds {v:?}");
    assert!(v[first..].iter().all(|s| (s - 1.0).abs() <= 0.1), "apex speeds {v:?}");
    assert!(trace.max_abs_pitch < 0.25);
}

#[test]
fn hopping_in_place_keeps_leg_vertical() {
    for ups in [UpsModel::default(), UpsModel::disabled()] {
        let trace = hop(0.0, ups, 3.0);
        let v = apex_speeds(&trace);
        assert!(v.len() >= 4);
        assert!(v.iter().all(|s| s.abs() < 0.01), "apex speeds {v:?}");
        let alpha = trace.ticks.iter().map(|(_, t)| t.alpha.abs()).fold(0.0, f64::max);
        assert!(alpha < 1e-3, "touchdown angle {alpha}");
    }
}

#[test]
fn torques_respect_limits_and_modes_follow_contact() {
    let trace = hop(1.0, UpsModel::default(), 2.5);
    let limit = RobotConstants::default().tau_max;
    assert!(trace.max_abs_tau.x <= limit.x + 1e-12 && trace.max_abs_tau.y <= limit.y + 1e-12);
    assert!(trace.ticks.iter().all(|(s, t)| t.mode == s.phase));
    let stance = trace.ticks.iter().filter(|(s, _)| s.phase == Phase::Stance).count();
    assert!(stance > 20 && stance < trace.ticks.len());
    assert!(trace.ticks.iter().filter(|(s, _)| s.phase == Phase::Stance).all(|(_, t)| t.solved));
}
