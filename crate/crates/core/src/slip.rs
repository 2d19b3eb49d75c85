//! Spring-loaded inverted pendulum template: stance integration, the
//! apex-to-apex return map, periodic gait synthesis with deadbeat touchdown
//! feedback, and motion-sketch generation for the MPC layers.
//!
//! The touchdown angle `alpha` is measured from the world vertical, positive
//! with the foot ahead of the CoM.

use alloc::vec::Vec;

use nalgebra::{Matrix2, Vector2};
#[allow(unused_imports)] // float math lives in std when it is linked
use num_traits::Float;
use thiserror::Error;

use crate::state::{RobotConstants, Vec2};

/// Fixed RK4 step for stance integration.
pub const STANCE_DT: f64 = 1e-4;
/// Stance phases longer than this are reported as [`ReturnMapFailure::NoLiftoff`].
pub const MAX_STANCE_TIME: f64 = 2.0;
const EVENT_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlipParams {
    pub mass: f64,
    pub stiffness: f64,
    pub rest_length: f64,
    /// Magnitude of gravity (acts along -z).
    pub gravity: f64,
}

impl Default for SlipParams {
    fn default() -> Self {
        Self::from(&RobotConstants::default())
    }
}

impl From<&RobotConstants> for SlipParams {
    fn from(c: &RobotConstants) -> Self {
        Self {
            mass: c.mass,
            stiffness: c.slip_stiffness,
            rest_length: c.rest_length,
            gravity: c.g(),
        }
    }
}

impl SlipParams {
    fn gravity_vec(&self) -> Vec2 {
        Vec2::new(0.0, -self.gravity)
    }

    /// Mechanical energy of a point mass state (no spring term).
    pub fn flight_energy(&self, s: &SlipState) -> f64 {
        0.5 * self.mass * s.v.norm_squared() + self.mass * self.gravity * s.p.y
    }

    /// Mechanical energy including the leg spring for a stance state.
    pub fn stance_energy(&self, s: &SlipState, foot: &Vec2) -> f64 {
        let d = (foot - s.p).norm() - self.rest_length;
        self.flight_energy(s) + 0.5 * self.stiffness * d * d
    }

    pub fn apex_energy(&self, apex: &ApexState) -> f64 {
        0.5 * self.mass * apex.velocity * apex.velocity + self.mass * self.gravity * apex.height
    }
}

/// CoM height and forward velocity at the top of flight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApexState {
    pub height: f64,
    pub velocity: f64,
}

impl ApexState {
    pub fn new(height: f64, velocity: f64) -> Self {
        Self { height, velocity }
    }

    fn as_vector(&self) -> Vector2<f64> {
        Vector2::new(self.height, self.velocity)
    }
}

/// Point-mass state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlipState {
    pub p: Vec2,
    pub v: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ReturnMapFailure {
    #[error("apex state is not a valid flight apex")]
    InvalidApex,
    #[error("apex is below the touchdown height for this angle")]
    TouchdownUnreachable,
    #[error("leg starts extending at touchdown")]
    NoCompression,
    #[error("mass reached the ground")]
    GroundContact,
    #[error("stance did not end")]
    NoLiftoff,
    #[error("mass does not rise after liftoff")]
    NoApex,
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum SlipError {
    #[error("return map failed: {0}")]
    ReturnMap(#[from] ReturnMapFailure),
    #[error("fixed point for {speed} m/s did not converge (residual {residual:e})")]
    NotConverged { speed: f64, residual: f64 },
    #[error("touchdown angle has no authority over the apex state (|dh/dalpha| = {norm:e})")]
    SingularControl { norm: f64 },
    #[error("speed {speed} m/s outside [{min}, {max}]")]
    OutOfRange { speed: f64, min: f64, max: f64 },
}

/// Spring force on the mass, `k (|r| - r0) r_hat` with `r = foot - p`.
///
/// This is also the ground reaction force transmitted by the leg; it points
/// away from the foot while the leg is compressed.
pub fn leg_force(p: &Vec2, foot: &Vec2, stiffness: f64, rest_length: f64) -> Vec2 {
    let r = foot - p;
    let len = r.norm();
    r * (stiffness * (len - rest_length) / len)
}

fn stance_rk4(s: &SlipState, foot: &Vec2, params: &SlipParams, stiffness: f64, h: f64) -> SlipState {
    let g = params.gravity_vec();
    let acc = |p: &Vec2| g + leg_force(p, foot, stiffness, params.rest_length) / params.mass;
    let k1v = acc(&s.p);
    let k1p = s.v;
    let p2 = s.p + k1p * (0.5 * h);
    let k2p = s.v + k1v * (0.5 * h);
    let k2v = acc(&p2);
    let p3 = s.p + k2p * (0.5 * h);
    let k3p = s.v + k2v * (0.5 * h);
    let k3v = acc(&p3);
    let p4 = s.p + k3p * h;
    let k4p = s.v + k3v * h;
    let k4v = acc(&p4);
    SlipState {
        p: s.p + (k1p + k2p * 2.0 + k3p * 2.0 + k4p) * (h / 6.0),
        v: s.v + (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (h / 6.0),
    }
}

/// One RK4 step of the stance dynamics. Returns the next state and the ground
/// reaction force at the start of the step.
///
/// A leg longer than the rest length after the step means liftoff happened
/// inside the step; callers locate it with their own event handling.
pub fn integrate_stance(
    state: &SlipState,
    foot: &Vec2,
    params: &SlipParams,
    dt: f64,
) -> (SlipState, Vec2) {
    let grf = leg_force(&state.p, foot, params.stiffness, params.rest_length);
    (stance_rk4(state, foot, params, params.stiffness, dt), grf)
}

/// Smallest `s` in `(0, h]` with `crossed(step(s))`, given `crossed(step(h))`.
fn bisect_event(h: f64, mut crossed: impl FnMut(f64) -> bool) -> f64 {
    let (mut lo, mut hi) = (0.0, h);
    for _ in 0..80 {
        if hi - lo <= EVENT_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if crossed(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// One recorded sample of a SLIP trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Sample {
    t: f64,
    state: SlipState,
    grf: Vec2,
    contact: bool,
}

/// Result of simulating one stance phase.
struct StanceResult {
    liftoff_time: f64,
    liftoff: SlipState,
}

/// Integrate a stance phase from `start` at time `t0`.
///
/// When `energy_gain` is set, the spring stiffness switches at maximum
/// compression so that the phase ends with that much extra mechanical energy.
fn run_stance(
    start: &SlipState,
    t0: f64,
    foot: &Vec2,
    params: &SlipParams,
    energy_gain: Option<f64>,
    sample_dt: Option<f64>,
    out: &mut Vec<Sample>,
) -> Result<StanceResult, ReturnMapFailure> {
    let r0 = params.rest_length;
    let len = |s: &SlipState| (foot - s.p).norm();
    let closing = |s: &SlipState| s.v.dot(&(foot - s.p));
    if closing(start) <= 0.0 && len(start) >= r0 {
        return Err(ReturnMapFailure::NoCompression);
    }
    let mut stiffness = params.stiffness;
    let mut switched = energy_gain.is_none();
    let mut s = *start;
    let mut t = t0;
    let mut next_sample = sample_dt.map(|dt| next_grid_time(t0, dt));
    loop {
        if t - t0 > MAX_STANCE_TIME {
            return Err(ReturnMapFailure::NoLiftoff);
        }
        let mut h = STANCE_DT;
        if let Some(ts) = next_sample {
            h = h.min(ts - t);
        }
        let next = stance_rk4(&s, foot, params, stiffness, h);
        if next.p.y <= 0.0 {
            return Err(ReturnMapFailure::GroundContact);
        }
        if !switched && closing(&next) <= 0.0 {
            // Bottom of the stance: swap stiffness to inject energy.
            let hb = bisect_event(h, |x| closing(&stance_rk4(&s, foot, params, stiffness, x)) <= 0.0);
            let bottom = stance_rk4(&s, foot, params, stiffness, hb);
            let delta = r0 - len(&bottom);
            let gain = energy_gain.unwrap_or(0.0);
            if delta > 1e-9 {
                stiffness = (params.stiffness + 2.0 * gain / (delta * delta))
                    .max(0.25 * params.stiffness);
            }
            switched = true;
            s = bottom;
            t += hb;
            continue;
        }
        if len(&next) >= r0 {
            let hl = bisect_event(h, |x| len(&stance_rk4(&s, foot, params, stiffness, x)) >= r0);
            let lo = stance_rk4(&s, foot, params, stiffness, hl);
            return Ok(StanceResult {
                liftoff_time: t + hl,
                liftoff: lo,
            });
        }
        s = next;
        t += h;
        if let Some(ts) = next_sample {
            if t >= ts - 1e-15 {
                t = ts;
                out.push(Sample {
                    t,
                    state: s,
                    grf: leg_force(&s.p, foot, stiffness, r0),
                    contact: true,
                });
                next_sample = Some(ts + sample_dt.unwrap());
            }
        }
    }
}

/// First grid point strictly after `t0` on a grid anchored at zero.
fn next_grid_time(t0: f64, dt: f64) -> f64 {
    let mut k = (t0 / dt).floor() + 1.0;
    if k * dt <= t0 + 1e-12 {
        k += 1.0;
    }
    k * dt
}

fn ballistic(s: &SlipState, g: f64, dt: f64) -> SlipState {
    SlipState {
        p: s.p + s.v * dt + Vec2::new(0.0, -0.5 * g * dt * dt),
        v: s.v + Vec2::new(0.0, -g * dt),
    }
}

fn push_flight(out: &mut Vec<Sample>, from: &SlipState, t_from: f64, t_to: f64, g: f64, dt: Option<f64>) {
    if let Some(dt) = dt {
        let mut t = next_grid_time(t_from, dt);
        while t < t_to - 1e-12 {
            out.push(Sample {
                t,
                state: ballistic(from, g, t - t_from),
                grf: Vec2::zeros(),
                contact: false,
            });
            t += dt;
        }
    }
}

/// Full hop from an apex: events plus optional samples.
struct HopResult {
    touchdown_time: f64,
    touchdown_point: Vec2,
    liftoff_time: f64,
    apex_time: f64,
    apex: ApexState,
    apex_state: SlipState,
}

fn touchdown_from_apex(
    apex: &ApexState,
    alpha: f64,
    params: &SlipParams,
) -> Result<(f64, SlipState, Vec2), ReturnMapFailure> {
    if !(apex.height.is_finite() && apex.velocity.is_finite()) || apex.height <= 0.0 {
        return Err(ReturnMapFailure::InvalidApex);
    }
    let r0 = params.rest_length;
    let z_td = r0 * alpha.cos();
    if !alpha.is_finite() || z_td <= 0.0 {
        return Err(ReturnMapFailure::GroundContact);
    }
    if apex.height < z_td {
        return Err(ReturnMapFailure::TouchdownUnreachable);
    }
    let g = params.gravity;
    let t_td = (2.0 * (apex.height - z_td) / g).sqrt();
    let td = SlipState {
        p: Vec2::new(apex.velocity * t_td, z_td),
        v: Vec2::new(apex.velocity, -g * t_td),
    };
    let foot = Vec2::new(td.p.x + r0 * alpha.sin(), 0.0);
    Ok((t_td, td, foot))
}

fn finish_flight(
    lo: &SlipState,
    t_lo: f64,
    params: &SlipParams,
) -> Result<(f64, SlipState), ReturnMapFailure> {
    if lo.v.y <= 0.0 {
        return Err(ReturnMapFailure::NoApex);
    }
    let t_up = lo.v.y / params.gravity;
    Ok((t_lo + t_up, ballistic(lo, params.gravity, t_up)))
}

fn simulate_hop(
    apex: &ApexState,
    alpha: f64,
    params: &SlipParams,
    energy_gain: Option<f64>,
    sample_dt: Option<f64>,
    out: &mut Vec<Sample>,
) -> Result<HopResult, ReturnMapFailure> {
    let (t_td, td, foot) = touchdown_from_apex(apex, alpha, params)?;
    let start = SlipState {
        p: Vec2::new(0.0, apex.height),
        v: Vec2::new(apex.velocity, 0.0),
    };
    if sample_dt.is_some() {
        out.push(Sample {
            t: 0.0,
            state: start,
            grf: Vec2::zeros(),
            contact: false,
        });
    }
    push_flight(out, &start, 0.0, t_td, params.gravity, sample_dt);
    if sample_dt.is_some() {
        out.push(Sample {
            t: t_td,
            state: td,
            grf: Vec2::zeros(),
            contact: false,
        });
    }
    let stance = run_stance(&td, t_td, &foot, params, energy_gain, sample_dt, out)?;
    let (t_ap, ap) = finish_flight(&stance.liftoff, stance.liftoff_time, params)?;
    if sample_dt.is_some() {
        out.push(Sample {
            t: stance.liftoff_time,
            state: stance.liftoff,
            grf: Vec2::zeros(),
            contact: false,
        });
        push_flight(out, &stance.liftoff, stance.liftoff_time, t_ap, params.gravity, sample_dt);
        out.push(Sample {
            t: t_ap,
            state: ap,
            grf: Vec2::zeros(),
            contact: false,
        });
    }
    Ok(HopResult {
        touchdown_time: t_td,
        touchdown_point: foot,
        liftoff_time: stance.liftoff_time,
        apex_time: t_ap,
        apex: ApexState::new(ap.p.y, ap.v.x),
        apex_state: ap,
    })
}

/// Apex-to-apex return map `h(apex, alpha)`.
pub fn apex_return_map(
    apex: &ApexState,
    alpha: f64,
    params: &SlipParams,
) -> Result<ApexState, ReturnMapFailure> {
    simulate_hop(apex, alpha, params, None, None, &mut Vec::new()).map(|h| h.apex)
}

fn return_map_vec(z: &Vector2<f64>, alpha: f64, params: &SlipParams) -> Result<Vector2<f64>, ReturnMapFailure> {
    apex_return_map(&ApexState::new(z.x, z.y), alpha, params).map(|a| a.as_vector())
}

/// One entry of the gait library.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaitEntry {
    pub commanded_speed: f64,
    pub apex: ApexState,
    pub alpha: f64,
    /// Deadbeat gain row acting on `[height - height*, velocity - velocity*]`.
    pub gain: [f64; 2],
}

impl GaitEntry {
    /// Touchdown angle from the deadbeat law `alpha* + K (x - x*)`.
    pub fn feedback_alpha(&self, measured: &ApexState) -> f64 {
        self.alpha
            + self.gain[0] * (measured.height - self.apex.height)
            + self.gain[1] * (measured.velocity - self.apex.velocity)
    }

    /// `|x* - h(x*, alpha*)|`.
    pub fn fixed_point_residual(&self, params: &SlipParams) -> Result<f64, ReturnMapFailure> {
        let next = apex_return_map(&self.apex, self.alpha, params)?;
        Ok((self.apex.as_vector() - next.as_vector()).norm())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointOptions {
    pub max_iterations: usize,
    /// Converged once the residual norm drops below this.
    pub tolerance: f64,
    /// Central-difference step for the Jacobian.
    pub fd_step: f64,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            tolerance: 1e-10,
            fd_step: 1e-6,
        }
    }
}

/// Starting guess for the fixed-point solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointGuess {
    pub height: f64,
    pub alpha: f64,
}

impl FixedPointGuess {
    /// Neutral-point guess: the foot lands half a stance length ahead.
    pub fn neutral(speed: f64, height: f64, params: &SlipParams) -> Self {
        let stance_time = core::f64::consts::PI * (params.mass / params.stiffness).sqrt();
        let s = (speed * stance_time / (2.0 * params.rest_length)).clamp(-0.9, 0.9);
        Self {
            height,
            alpha: s.asin(),
        }
    }
}

/// Touchdown angle that returns the apex speed unchanged at the guessed height.
///
/// Energy is conserved, so this lands on the periodic family at that height
/// and keeps the least-squares solve from sliding along it.
fn match_speed_at_height(speed: f64, guess: FixedPointGuess, params: &SlipParams) -> Option<f64> {
    let apex = ApexState::new(guess.height, speed);
    let f = |a: f64| apex_return_map(&apex, a, params).ok().map(|n| n.velocity - speed);
    let (mut lo, mut hi) = (guess.alpha, guess.alpha);
    let (mut f_lo, mut f_hi) = (f(lo)?, f(hi)?);
    // The next-apex speed falls as alpha grows; walk outward to bracket the root.
    let mut width = 0.02;
    while !(f_lo >= 0.0 && f_hi <= 0.0) {
        if width > 1.0 {
            return None;
        }
        if f_lo < 0.0 {
            lo -= width;
            f_lo = f(lo)?;
        }
        if f_hi > 0.0 {
            hi += width;
            f_hi = f(hi)?;
        }
        width *= 2.0;
    }
    for _ in 0..100 {
        if hi - lo < 1e-13 {
            break;
        }
        // Regula falsi with bisection fallback.
        let mut mid = if f_lo != f_hi { lo + f_lo * (hi - lo) / (f_lo - f_hi) } else { 0.5 * (lo + hi) };
        if !(mid > lo && mid < hi) || (mid - lo).min(hi - mid) < 0.05 * (hi - lo) {
            mid = 0.5 * (lo + hi);
        }
        let fm = f(mid)?;
        if fm == 0.0 {
            return Some(mid);
        }
        if fm > 0.0 {
            lo = mid;
            f_lo = fm;
        } else {
            hi = mid;
            f_hi = fm;
        }
    }
    Some(if f_lo.abs() < f_hi.abs() { lo } else { hi })
}

/// Periodic apex state and touchdown angle for `target_speed`.
///
/// Levenberg-Marquardt over `(height, alpha)` with the apex velocity pinned to
/// the target, minimizing `|x - h(x, alpha)|^2`. The returned entry has a zero
/// gain; see [`deadbeat_gain`].
pub fn solve_fixed_point(
    target_speed: f64,
    params: &SlipParams,
    guess: FixedPointGuess,
    opts: &FixedPointOptions,
) -> Result<GaitEntry, SlipError> {
    let residual = |z: &Vector2<f64>| -> Result<Vector2<f64>, ReturnMapFailure> {
        let x = Vector2::new(z.x, target_speed);
        Ok(x - return_map_vec(&x, z.y, params)?)
    };
    let alpha0 = match_speed_at_height(target_speed, guess, params).unwrap_or(guess.alpha);
    let mut z = Vector2::new(guess.height, alpha0);
    let mut r = residual(&z)?;
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    let h = opts.fd_step;
    for _ in 0..opts.max_iterations {
        if cost.sqrt() < opts.tolerance {
            break;
        }
        let mut jac = Matrix2::zeros();
        for c in 0..2 {
            let mut zp = z;
            let mut zm = z;
            zp[c] += h;
            zm[c] -= h;
            let col = (residual(&zp)? - residual(&zm)?) / (2.0 * h);
            jac.set_column(c, &col);
        }
        let jtj = jac.transpose() * jac;
        let jtr = jac.transpose() * r;
        let mut accepted = false;
        for _ in 0..30 {
            let damped = jtj + Matrix2::from_diagonal(&(jtj.diagonal() * lambda)) + Matrix2::identity() * (lambda * 1e-9);
            let Some(step) = damped.try_inverse().map(|inv| -(inv * jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let trial = z + step;
            match residual(&trial) {
                Ok(rt) if rt.norm_squared() < cost => {
                    z = trial;
                    r = rt;
                    cost = rt.norm_squared();
                    lambda = (lambda / 3.0).max(1e-12);
                    accepted = true;
                    break;
                }
                _ => lambda *= 4.0,
            }
        }
        if !accepted {
            break;
        }
    }
    if cost.sqrt() < opts.tolerance.max(1e-6) {
        Ok(GaitEntry {
            commanded_speed: target_speed,
            apex: ApexState::new(z.x, target_speed),
            alpha: z.y,
            gain: [0.0; 2],
        })
    } else {
        Err(SlipError::NotConverged {
            speed: target_speed,
            residual: cost.sqrt(),
        })
    }
}

/// Finite-difference linearization of the return map at a fixed point:
/// `(d h / d x, d h / d alpha)`.
pub fn return_map_jacobians(
    entry: &GaitEntry,
    params: &SlipParams,
    step: f64,
) -> Result<(Matrix2<f64>, Vector2<f64>), ReturnMapFailure> {
    let x = entry.apex.as_vector();
    let mut a = Matrix2::zeros();
    for c in 0..2 {
        let mut xp = x;
        let mut xm = x;
        xp[c] += step;
        xm[c] -= step;
        let col = (return_map_vec(&xp, entry.alpha, params)? - return_map_vec(&xm, entry.alpha, params)?)
            / (2.0 * step);
        a.set_column(c, &col);
    }
    let b = (return_map_vec(&x, entry.alpha + step, params)? - return_map_vec(&x, entry.alpha - step, params)?)
        / (2.0 * step);
    Ok((a, b))
}

/// Deadbeat gain for the touchdown angle.
///
/// The SLIP map conserves energy, so one scalar input cannot null both apex
/// coordinates; the gain nulls the linearized next-apex velocity error and
/// leaves the energy error in the height.
pub fn deadbeat_gain(entry: &GaitEntry, params: &SlipParams) -> Result<[f64; 2], SlipError> {
    let (a, b) = return_map_jacobians(entry, params, 1e-5)?;
    if b.norm() < 1e-8 || b.y.abs() < 1e-8 {
        return Err(SlipError::SingularControl { norm: b.norm() });
    }
    let row = a.row(1) / -b.y;
    Ok([row[0], row[1]])
}

/// Speed grid of the gait library.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedGrid {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl Default for SpeedGrid {
    fn default() -> Self {
        Self {
            min: -3.0,
            max: 3.0,
            step: 0.1,
        }
    }
}

impl SpeedGrid {
    /// Grid values computed as `min + i * step`, snapped to the nearest
    /// multiple of `1e-9` so decimal grids stay exact.
    pub fn speeds(&self) -> Vec<f64> {
        let n = ((self.max - self.min) / self.step + 1e-9).floor() as i64;
        (0..=n)
            .map(|i| {
                let v = self.min + i as f64 * self.step;
                (v * 1e9).round() / 1e9
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LibraryOptions {
    pub grid: SpeedGrid,
    /// Apex height used to seed the zero-speed solve.
    pub nominal_height: f64,
    pub fixed_point: FixedPointOptions,
}

impl Default for LibraryOptions {
    fn default() -> Self {
        Self {
            grid: SpeedGrid::default(),
            nominal_height: 0.45,
            fixed_point: FixedPointOptions::default(),
        }
    }
}

/// Ordered table of periodic gaits, one per commanded speed.
#[derive(Debug, Clone, PartialEq)]
pub struct GaitLibrary {
    pub params: SlipParams,
    pub entries: Vec<GaitEntry>,
}

/// Solve one library entry (fixed point plus gain).
pub fn solve_entry(
    speed: f64,
    params: &SlipParams,
    guess: FixedPointGuess,
    opts: &FixedPointOptions,
) -> Result<GaitEntry, SlipError> {
    let mut entry = solve_fixed_point(speed, params, guess, opts)?;
    entry.gain = deadbeat_gain(&entry, params)?;
    Ok(entry)
}

/// Build the library, sweeping outward from the slowest |speed| so each
/// solve is warm-started from its neighbour.
pub fn build_gait_library(params: &SlipParams, opts: &LibraryOptions) -> Result<GaitLibrary, (f64, SlipError)> {
    let speeds = opts.grid.speeds();
    let mut entries: Vec<Option<GaitEntry>> = alloc::vec![None; speeds.len()];
    let pivot = speeds
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let seed = |speed: f64, prev: Option<&GaitEntry>| match prev {
        Some(e) => {
            let neutral = FixedPointGuess::neutral(speed, e.apex.height, params);
            let prev_neutral = FixedPointGuess::neutral(e.commanded_speed, e.apex.height, params);
            FixedPointGuess {
                height: e.apex.height,
                alpha: e.alpha + (neutral.alpha - prev_neutral.alpha),
            }
        }
        None => FixedPointGuess::neutral(speed, opts.nominal_height, params),
    };
    let order_up = pivot..speeds.len();
    let order_down = (0..pivot).rev();
    for idx in order_up.chain(order_down) {
        let speed = speeds[idx];
        let prev = if idx >= pivot {
            idx.checked_sub(1).filter(|&p| p >= pivot)
        } else {
            Some(idx + 1)
        };
        let prev_entry = prev.and_then(|p| entries[p].as_ref());
        let guess = seed(speed, prev_entry);
        let entry = solve_entry(speed, params, guess, &opts.fixed_point).map_err(|e| (speed, e))?;
        entries[idx] = Some(entry);
    }
    Ok(GaitLibrary {
        params: *params,
        entries: entries.into_iter().map(|e| e.expect("every grid point solved")).collect(),
    })
}

impl GaitLibrary {
    pub fn speed_range(&self) -> (f64, f64) {
        let first = self.entries.first().map_or(0.0, |e| e.commanded_speed);
        let last = self.entries.last().map_or(0.0, |e| e.commanded_speed);
        (first, last)
    }

    /// Piecewise-linear interpolation of every field; exact at grid speeds.
    pub fn query(&self, speed: f64) -> Result<GaitEntry, SlipError> {
        let (min, max) = self.speed_range();
        if self.entries.is_empty() || !(speed >= min && speed <= max) {
            return Err(SlipError::OutOfRange { speed, min, max });
        }
        let i = self.entries.partition_point(|e| e.commanded_speed <= speed);
        if i == 0 {
            return Ok(self.entries[0]);
        }
        let a = &self.entries[i - 1];
        if a.commanded_speed == speed || i == self.entries.len() {
            return Ok(*a);
        }
        let b = &self.entries[i];
        let t = (speed - a.commanded_speed) / (b.commanded_speed - a.commanded_speed);
        let lerp = |x: f64, y: f64| x + t * (y - x);
        Ok(GaitEntry {
            commanded_speed: speed,
            apex: ApexState::new(lerp(a.apex.height, b.apex.height), lerp(a.apex.velocity, b.apex.velocity)),
            alpha: lerp(a.alpha, b.alpha),
            gain: [lerp(a.gain[0], b.gain[0]), lerp(a.gain[1], b.gain[1])],
        })
    }
}

/// Time-indexed reference produced by rolling the SLIP forward.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSketch {
    pub times: Vec<f64>,
    pub com_pos: Vec<Vec2>,
    pub com_vel: Vec<Vec2>,
    pub grf: Vec<Vec2>,
    /// `true` strictly inside stance, where the reference GRF is nonzero.
    pub contact: Vec<bool>,
    pub touchdown_point: Vec2,
    pub touchdown_time: f64,
    pub liftoff_time: f64,
    /// Apex the sketch ends at.
    pub end_apex: ApexState,
    /// Gravity magnitude used to extrapolate past the end.
    pub gravity: f64,
}

impl MotionSketch {
    fn from_samples(
        samples: Vec<Sample>,
        t0: f64,
        x0: f64,
        touchdown_point: Vec2,
        touchdown_time: f64,
        liftoff_time: f64,
        end_apex: ApexState,
        gravity: f64,
    ) -> Self {
        let offset = Vec2::new(x0, 0.0);
        let n = samples.len();
        let mut s = MotionSketch {
            times: Vec::with_capacity(n),
            com_pos: Vec::with_capacity(n),
            com_vel: Vec::with_capacity(n),
            grf: Vec::with_capacity(n),
            contact: Vec::with_capacity(n),
            touchdown_point: touchdown_point + offset,
            touchdown_time: touchdown_time + t0,
            liftoff_time: liftoff_time + t0,
            end_apex,
            gravity,
        };
        for smp in samples {
            s.times.push(smp.t + t0);
            s.com_pos.push(smp.state.p + offset);
            s.com_vel.push(smp.state.v);
            s.grf.push(smp.grf);
            s.contact.push(smp.contact);
        }
        s
    }

    pub fn start_time(&self) -> f64 {
        self.times[0]
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    fn bracket(&self, t: f64) -> (usize, f64) {
        let t = t.clamp(self.start_time(), self.end_time());
        let i = self.times.partition_point(|&x| x <= t).clamp(1, self.times.len() - 1);
        let (ta, tb) = (self.times[i - 1], self.times[i]);
        let w = if tb > ta { (t - ta) / (tb - ta) } else { 0.0 };
        (i - 1, w)
    }

    /// Linearly interpolated CoM position and velocity. Before the start the
    /// first sample is held; past the end the final apex continues ballistically.
    pub fn com_at(&self, t: f64) -> (Vec2, Vec2) {
        let end = self.end_time();
        if t > end {
            let h = t - end;
            let (p, v) = (self.com_pos[self.times.len() - 1], self.com_vel[self.times.len() - 1]);
            return (
                Vec2::new(p.x + v.x * h, p.y + v.y * h - 0.5 * self.gravity * h * h),
                Vec2::new(v.x, v.y - self.gravity * h),
            );
        }
        let (i, w) = self.bracket(t);
        let lerp = |a: &Vec2, b: &Vec2| a + (b - a) * w;
        (
            lerp(&self.com_pos[i], &self.com_pos[i + 1]),
            lerp(&self.com_vel[i], &self.com_vel[i + 1]),
        )
    }

    pub fn grf_at(&self, t: f64) -> Vec2 {
        let (i, w) = self.bracket(t);
        self.grf[i] + (self.grf[i + 1] - self.grf[i]) * w
    }

    /// Mean reference GRF over `[t0, t1]` (trapezoid on samples).
    pub fn mean_grf(&self, t0: f64, t1: f64) -> Vec2 {
        if t1 <= t0 {
            return self.grf_at(t0);
        }
        let mut acc = Vec2::zeros();
        let mut prev_t = t0;
        let mut prev_f = self.grf_at(t0);
        let start = self.times.partition_point(|&x| x <= t0);
        for i in start..self.times.len() {
            if self.times[i] >= t1 {
                break;
            }
            acc += (prev_f + self.grf[i]) * (0.5 * (self.times[i] - prev_t));
            prev_t = self.times[i];
            prev_f = self.grf[i];
        }
        let end_f = self.grf_at(t1);
        acc += (prev_f + end_f) * (0.5 * (t1 - prev_t));
        acc / (t1 - t0)
    }

    /// Whether `t` lies inside the sketched stance interval.
    pub fn in_stance(&self, t: f64) -> bool {
        t > self.touchdown_time && t < self.liftoff_time
    }

    /// Trapezoidal GRF impulse over the whole sketch.
    pub fn impulse(&self) -> Vec2 {
        let mut acc = Vec2::zeros();
        for i in 1..self.times.len() {
            acc += (self.grf[i] + self.grf[i - 1]) * (0.5 * (self.times[i] - self.times[i - 1]));
        }
        acc
    }
}

/// Roll the SLIP from `apex` through one flight-stance-flight cycle.
///
/// `t0` and `x0` place the apex in absolute time and world x. With
/// `energy_target` the stance injects the energy difference so the sketch ends
/// at that apex energy.
pub fn generate_motion_sketch(
    apex: &ApexState,
    alpha: f64,
    params: &SlipParams,
    dt_sample: f64,
    t0: f64,
    x0: f64,
    energy_target: Option<f64>,
) -> Result<MotionSketch, ReturnMapFailure> {
    let mut samples = Vec::new();
    let gain = energy_target.map(|e| e - params.apex_energy(apex));
    let hop = simulate_hop(apex, alpha, params, gain, Some(dt_sample), &mut samples)?;
    let _ = (hop.apex_time, hop.apex_state);
    Ok(MotionSketch::from_samples(
        samples,
        t0,
        x0,
        hop.touchdown_point,
        hop.touchdown_time,
        hop.liftoff_time,
        hop.apex,
        params.gravity,
    ))
}

/// Sketch starting at touchdown from a measured CoM state and foot point.
///
/// Used to reset the reference when contact is detected.
pub fn stance_sketch(
    touchdown: &SlipState,
    foot: &Vec2,
    params: &SlipParams,
    dt_sample: f64,
    t0: f64,
    energy_target: Option<f64>,
) -> Result<MotionSketch, ReturnMapFailure> {
    let r0 = params.rest_length;
    // The template leg starts at rest length along the measured leg direction.
    let r = foot - touchdown.p;
    let dir = if r.norm() > 0.0 { r / r.norm() } else { Vec2::new(0.0, -1.0) };
    let start = SlipState {
        p: foot - dir * r0,
        v: touchdown.v,
    };
    if start.p.y <= 0.0 {
        return Err(ReturnMapFailure::GroundContact);
    }
    let gain = energy_target.map(|e| e - params.flight_energy(&start));
    let mut samples = alloc::vec![Sample {
        t: 0.0,
        state: start,
        grf: Vec2::zeros(),
        contact: false,
    }];
    let stance = run_stance(&start, 0.0, foot, params, gain, Some(dt_sample), &mut samples)?;
    let (t_ap, ap) = finish_flight(&stance.liftoff, stance.liftoff_time, params)?;
    samples.push(Sample {
        t: stance.liftoff_time,
        state: stance.liftoff,
        grf: Vec2::zeros(),
        contact: false,
    });
    push_flight(&mut samples, &stance.liftoff, stance.liftoff_time, t_ap, params.gravity, Some(dt_sample));
    samples.push(Sample {
        t: t_ap,
        state: ap,
        grf: Vec2::zeros(),
        contact: false,
    });
    Ok(MotionSketch::from_samples(
        samples,
        t0,
        0.0,
        *foot,
        0.0,
        stance.liftoff_time,
        ApexState::new(ap.p.y, ap.v.x),
        params.gravity,
    ))
}
