//! Convex MPC on the planar single-rigid-body model.
//!
//! State ordering is `[p_x, p_z, theta, v_x, v_z, theta_dot]`. Decision
//! variables are packed stage by stage as `[f_0, x_1, f_1, x_2, ..., f_{N-1}, x_N]`
//! and constraint rows as `[dynamics_k (6), cone_k (4)]` per stage, so the
//! sparsity pattern depends only on `N`.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Matrix6, SMatrix, SVector};
#[allow(unused_imports)] // float math lives in std when it is linked
use num_traits::Float;
use thiserror::Error;

use crate::qp::{CscMatrix, QpError, QpProblem, QpSolution, QpSolver, QpStatus, SolverSettings, INF_BOUND};
use crate::slip::MotionSketch;
use crate::state::{wedge, RobotConstants, RobotState, Vec2};

pub const NX: usize = 6;
pub const NF: usize = 2;
pub(crate) const STAGE_VARS: usize = NX + NF;
pub(crate) const STAGE_ROWS: usize = NX + 4;

pub type SrbVec = SVector<f64, 6>;
pub type Matrix6x2 = SMatrix<f64, 6, 2>;

/// Rigid-body part of the robot state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SrbState {
    pub p_c: Vec2,
    pub theta: f64,
    pub v_c: Vec2,
    pub theta_dot: f64,
}

impl SrbState {
    pub fn to_vector(&self) -> SrbVec {
        SrbVec::from([self.p_c.x, self.p_c.y, self.theta, self.v_c.x, self.v_c.y, self.theta_dot])
    }

    pub fn from_vector(x: &SrbVec) -> Self {
        Self {
            p_c: Vec2::new(x[0], x[1]),
            theta: x[2],
            v_c: Vec2::new(x[3], x[4]),
            theta_dot: x[5],
        }
    }

    pub fn from_robot(s: &RobotState) -> Self {
        Self {
            p_c: s.p_c,
            theta: s.theta,
            v_c: s.v_c,
            theta_dot: s.theta_dot,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SrbModel {
    pub mass: f64,
    pub inertia: f64,
    /// Magnitude of gravity.
    pub gravity: f64,
    pub friction: f64,
    pub f_max: f64,
}

impl From<&RobotConstants> for SrbModel {
    fn from(c: &RobotConstants) -> Self {
        Self {
            mass: c.mass,
            inertia: c.inertia,
            gravity: c.g(),
            friction: c.friction,
            f_max: 10.0 * c.weight(),
        }
    }
}

impl Default for SrbModel {
    fn default() -> Self {
        Self::from(&RobotConstants::default())
    }
}

/// Continuous SRB vector field with the GRF acting at `foot`.
pub fn srb_dynamics(x: &SrbVec, f: &Vec2, foot: &Vec2, model: &SrbModel) -> SrbVec {
    let r = foot - Vec2::new(x[0], x[1]);
    SrbVec::from([
        x[3],
        x[4],
        x[5],
        f.x / model.mass,
        f.y / model.mass - model.gravity,
        wedge(&r, f) / model.inertia,
    ])
}

/// `ẋ ≈ A_c x + B_c f + d_c` around a reference point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuousLinearization {
    pub a: Matrix6<f64>,
    pub b: Matrix6x2,
    pub d: SrbVec,
}

/// First-order expansion of [`srb_dynamics`] at `(x_ref, f_ref)`.
///
/// The moment arm is evaluated at the reference CoM and foothold; its
/// sensitivity to the CoM position enters `A_c`.
pub fn linearize_continuous(x_ref: &SrbVec, foot: &Vec2, f_ref: &Vec2, model: &SrbModel) -> ContinuousLinearization {
    let mut a = Matrix6::zeros();
    a[(0, 3)] = 1.0;
    a[(1, 4)] = 1.0;
    a[(2, 5)] = 1.0;
    a[(5, 0)] = -f_ref.y / model.inertia;
    a[(5, 1)] = f_ref.x / model.inertia;
    let r = foot - Vec2::new(x_ref[0], x_ref[1]);
    let mut b = Matrix6x2::zeros();
    b[(3, 0)] = 1.0 / model.mass;
    b[(4, 1)] = 1.0 / model.mass;
    b[(5, 0)] = -r.y / model.inertia;
    b[(5, 1)] = r.x / model.inertia;
    let d = srb_dynamics(x_ref, f_ref, foot, model) - a * x_ref - b * f_ref;
    ContinuousLinearization { a, b, d }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Discretization {
    #[default]
    ForwardEuler,
    /// Second-order truncation of the matrix exponential; exact for the
    /// translational double integrator under a constant force.
    SecondOrder,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LtvStep {
    pub a: Matrix6<f64>,
    pub b: Matrix6x2,
    pub d: SrbVec,
    pub dt: f64,
    pub contact: bool,
    pub f_max: f64,
}

pub fn linearize_discretize(
    x_ref: &SrbVec,
    foot: &Vec2,
    f_ref: &Vec2,
    model: &SrbModel,
    dt: f64,
    contact: bool,
    method: Discretization,
) -> LtvStep {
    let f = if contact { *f_ref } else { Vec2::zeros() };
    let mut c = linearize_continuous(x_ref, foot, &f, model);
    if !contact {
        c.b = Matrix6x2::zeros();
    }
    let (a, b, d) = match method {
        Discretization::ForwardEuler => (Matrix6::identity() + c.a * dt, c.b * dt, c.d * dt),
        Discretization::SecondOrder => {
            let h2 = 0.5 * dt * dt;
            (
                Matrix6::identity() + c.a * dt + c.a * c.a * h2,
                c.b * dt + c.a * c.b * h2,
                c.d * dt + c.a * c.d * h2,
            )
        }
    };
    LtvStep {
        a,
        b,
        d,
        dt,
        contact,
        f_max: if contact { model.f_max } else { 0.0 },
    }
}

/// Structural nonzeros of `A_k` (shared by both discretizations).
pub(crate) fn a_pattern(i: usize, j: usize) -> bool {
    i == j || (i < 3 && j == i + 3) || (i == 2 && j < 2) || (i == 5 && j != 2 && j != 5)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcWeights {
    pub q: [f64; 6],
    pub r_f: [f64; 2],
    pub r_tau: [f64; 2],
    pub gamma: f64,
    pub horizon: usize,
}

impl Default for MpcWeights {
    fn default() -> Self {
        Self {
            q: [10.0, 10.0, 1.0, 1.0, 0.0, 0.1],
            r_f: [1e-5, 1e-5],
            r_tau: [1e-5, 1e-5],
            gamma: 0.95,
            horizon: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MpcError {
    #[error("horizon has {got} steps, expected {expected}")]
    Horizon { expected: usize, got: usize },
    #[error("invalid weights: {0}")]
    Weights(&'static str),
    #[error("non-finite initial state")]
    InitialState,
    #[error("step {0} has a non-positive duration")]
    StepDuration(usize),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("first horizon step is flight; route to the swing controller")]
    FlightAtFirstStep,
}

impl MpcWeights {
    pub fn validate(&self) -> Result<(), MpcError> {
        let all = self.q.iter().chain(&self.r_f).chain(&self.r_tau);
        if all.clone().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(MpcError::Weights("weights must be finite and >= 0"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(MpcError::Weights("gamma must lie in (0, 1)"));
        }
        if self.horizon == 0 {
            return Err(MpcError::Weights("horizon must be positive"));
        }
        Ok(())
    }
}

/// One horizon interval `[t, t + dt)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HorizonStep {
    pub t: f64,
    pub dt: f64,
    pub contact: bool,
}

/// Tracking targets over the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct SrbReference {
    pub steps: Vec<HorizonStep>,
    /// `N + 1` desired states at the step boundaries.
    pub x_des: Vec<SrbVec>,
    /// `N` desired GRFs, one per step.
    pub f_des: Vec<Vec2>,
    /// Foothold the moment arms are evaluated against.
    pub foot: Vec2,
}

impl SrbReference {
    /// Sample the sketch at the step boundaries; rotational targets are zero.
    pub fn from_sketch(sketch: &MotionSketch, steps: &[HorizonStep]) -> Self {
        let mut x_des = Vec::with_capacity(steps.len() + 1);
        let mut f_des = Vec::with_capacity(steps.len());
        let state_at = |t: f64| {
            let (p, v) = sketch.com_at(t);
            SrbVec::from([p.x, p.y, 0.0, v.x, v.y, 0.0])
        };
        for s in steps {
            x_des.push(state_at(s.t));
            f_des.push(if s.contact {
                sketch.mean_grf(s.t, s.t + s.dt)
            } else {
                Vec2::zeros()
            });
        }
        let end = steps.last().map_or(sketch.start_time(), |s| s.t + s.dt);
        x_des.push(state_at(end));
        Self {
            steps: steps.to_vec(),
            x_des,
            f_des,
            foot: sketch.touchdown_point,
        }
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }
}

/// Index helpers for the stage-interleaved packing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SrbLayout {
    pub horizon: usize,
}

impl SrbLayout {
    pub fn n_vars(&self) -> usize {
        STAGE_VARS * self.horizon
    }

    pub fn n_rows(&self) -> usize {
        STAGE_ROWS * self.horizon
    }

    /// Column of `f_k`.
    pub fn f(&self, k: usize) -> usize {
        STAGE_VARS * k
    }

    /// Column of `x_k` for `k >= 1`.
    pub fn x(&self, k: usize) -> usize {
        STAGE_VARS * (k - 1) + NF
    }

    pub fn dyn_row(&self, k: usize) -> usize {
        STAGE_ROWS * k
    }

    pub fn cone_row(&self, k: usize) -> usize {
        STAGE_ROWS * k + NX
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SrbQp {
    pub problem: QpProblem,
    pub ltv: Vec<LtvStep>,
    pub layout: SrbLayout,
    pub x0: SrbVec,
}

/// Stage weight `gamma^k` with the terminal state at `k = N`.
pub fn stage_weight(gamma: f64, k: usize) -> f64 {
    gamma.powi(k as i32)
}

/// Cost `sum_k gamma^k (|x_k - x_k^des|_Q^2 + |f_k - f_k^des|_Rf^2)` with
/// the fixed `x_0` contributing only its GRF term.
pub fn tracking_objective(reference: &SrbReference, weights: &MpcWeights, states: &[SrbVec], grfs: &[Vec2]) -> f64 {
    let n = reference.horizon();
    let mut j = 0.0;
    for k in 0..n {
        let w = stage_weight(weights.gamma, k);
        let df = grfs[k] - reference.f_des[k];
        j += w * (weights.r_f[0] * df.x * df.x + weights.r_f[1] * df.y * df.y);
    }
    for k in 1..=n {
        let w = stage_weight(weights.gamma, k);
        let dx = states[k] - reference.x_des[k];
        j += w * (0..NX).map(|i| weights.q[i] * dx[i] * dx[i]).sum::<f64>();
    }
    j
}

/// Friction pyramid and contact-schedule rows for one GRF:
/// `f_x - mu f_z <= 0`, `f_x + mu f_z >= 0`, `0 <= f_z <= c f_max`,
/// `|f_x| <= mu c f_max`.
pub(crate) fn push_cone_rows(
    trip: &mut Vec<(usize, usize, f64)>,
    lower: &mut [f64],
    upper: &mut [f64],
    row: usize,
    col: usize,
    mu: f64,
    f_max: f64,
) {
    trip.push((row, col, 1.0));
    trip.push((row, col + 1, -mu));
    lower[row] = -INF_BOUND;
    upper[row] = 0.0;
    trip.push((row + 1, col, 1.0));
    trip.push((row + 1, col + 1, mu));
    lower[row + 1] = 0.0;
    upper[row + 1] = INF_BOUND;
    trip.push((row + 2, col + 1, 1.0));
    lower[row + 2] = 0.0;
    upper[row + 2] = f_max;
    trip.push((row + 3, col, 1.0));
    lower[row + 3] = -mu * f_max;
    upper[row + 3] = mu * f_max;
    if f_max == 0.0 {
        // the box rows already pin f to zero; duplicates would make the polish multipliers ambiguous
        upper[row] = INF_BOUND;
        lower[row + 1] = -INF_BOUND;
    }
}

pub fn build_ltv(reference: &SrbReference, model: &SrbModel, method: Discretization) -> Result<Vec<LtvStep>, MpcError> {
    reference
        .steps
        .iter()
        .enumerate()
        .map(|(k, s)| {
            if !(s.dt > 0.0) {
                return Err(MpcError::StepDuration(k));
            }
            Ok(linearize_discretize(
                &reference.x_des[k],
                &reference.foot,
                &reference.f_des[k],
                model,
                s.dt,
                s.contact,
                method,
            ))
        })
        .collect()
}

pub fn build_srb_qp(
    reference: &SrbReference,
    x0: &SrbVec,
    weights: &MpcWeights,
    model: &SrbModel,
    method: Discretization,
) -> Result<SrbQp, MpcError> {
    weights.validate()?;
    let n = reference.horizon();
    if n != weights.horizon || reference.x_des.len() != n + 1 || reference.f_des.len() != n {
        return Err(MpcError::Horizon {
            expected: weights.horizon,
            got: n,
        });
    }
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(MpcError::InitialState);
    }
    let layout = SrbLayout { horizon: n };
    let ltv = build_ltv(reference, model, method)?;
    let nv = layout.n_vars();
    let nr = layout.n_rows();

    let mut p_trip = Vec::with_capacity(nv);
    let mut q = vec![0.0; nv];
    for k in 0..n {
        let w = stage_weight(weights.gamma, k);
        for i in 0..NF {
            let c = layout.f(k) + i;
            p_trip.push((c, c, 2.0 * w * weights.r_f[i]));
            q[c] = -2.0 * w * weights.r_f[i] * reference.f_des[k][i];
        }
        let w = stage_weight(weights.gamma, k + 1);
        for i in 0..NX {
            let c = layout.x(k + 1) + i;
            p_trip.push((c, c, 2.0 * w * weights.q[i]));
            q[c] = -2.0 * w * weights.q[i] * reference.x_des[k + 1][i];
        }
    }
    let p = CscMatrix::from_triplets(nv, nv, &p_trip);

    let mut a_trip = Vec::with_capacity(n * 60);
    let mut lower = vec![0.0; nr];
    let mut upper = vec![0.0; nr];
    for (k, step) in ltv.iter().enumerate() {
        let row = layout.dyn_row(k);
        // x_{k+1} - A_k x_k - B_k f_k = d_k
        let mut rhs = step.d;
        if k == 0 {
            rhs += step.a * x0;
        }
        for i in 0..NX {
            a_trip.push((row + i, layout.x(k + 1) + i, 1.0));
            if k > 0 {
                for j in 0..NX {
                    if a_pattern(i, j) {
                        a_trip.push((row + i, layout.x(k) + j, -step.a[(i, j)]));
                    }
                }
            }
            for j in 0..NF {
                a_trip.push((row + i, layout.f(k) + j, -step.b[(i, j)]));
            }
            lower[row + i] = rhs[i];
            upper[row + i] = rhs[i];
        }
        push_cone_rows(
            &mut a_trip,
            &mut lower,
            &mut upper,
            layout.cone_row(k),
            layout.f(k),
            model.friction,
            step.f_max,
        );
    }
    let a = CscMatrix::from_triplets(nr, nv, &a_trip);
    let problem = QpProblem::new(p, q, a, lower, upper)?;
    Ok(SrbQp {
        problem,
        ltv,
        layout,
        x0: *x0,
    })
}

/// Planned trajectory returned by either MPC layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    /// `N + 1` states starting with the fixed initial state.
    pub states: Vec<SrbVec>,
    pub grfs: Vec<Vec2>,
    /// Joint angles per step (stance steps of the kinodynamic layer only).
    pub joints: Vec<Option<Vec2>>,
    pub torques: Vec<Option<Vec2>>,
    pub status: QpStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Largest nonlinear constraint violation (kinodynamic layer).
    pub max_violation: f64,
    /// Set when the solve could not be trusted and the caller should fall back.
    pub degraded: bool,
    /// Set when a stance foothold was out of reach and IK was projected.
    pub ik_clamped: bool,
    pub objective: f64,
}

impl MpcSolution {
    pub fn horizon(&self) -> usize {
        self.grfs.len()
    }

    /// Usable unless infeasibility was certified or values are non-finite.
    pub fn usable(&self) -> bool {
        !self.degraded
            && !matches!(self.status, QpStatus::PrimalInfeasible | QpStatus::DualInfeasible)
            && self.grfs.iter().all(|f| f.iter().all(|v| v.is_finite()))
    }
}

/// Solver wrapper that keeps the KKT factorization and the previous solution.
#[derive(Debug, Clone)]
pub struct SrbMpc {
    settings: SolverSettings,
    solver: Option<QpSolver>,
    previous: Option<QpSolution>,
    horizon: usize,
}

impl SrbMpc {
    pub fn new(settings: SolverSettings) -> Self {
        Self {
            settings,
            solver: None,
            previous: None,
            horizon: 0,
        }
    }

    pub fn reset(&mut self) {
        self.previous = None;
    }

    /// Solve with a shift-by-one warm start from the previous solution.
    pub fn solve(&mut self, qp: &SrbQp, reference: &SrbReference, weights: &MpcWeights) -> Result<MpcSolution, MpcError> {
        let layout = qp.layout;
        match &mut self.solver {
            Some(s) if self.horizon == layout.horizon => s.update_problem(qp.problem.clone())?,
            _ => {
                self.solver = Some(QpSolver::new(qp.problem.clone(), self.settings)?);
                self.horizon = layout.horizon;
                self.previous = None;
            }
        }
        let warm = self.previous.as_ref().map(|p| shift_warm_start(p, STAGE_VARS, STAGE_ROWS));
        let solver = self.solver.as_mut().unwrap();
        let sol = solver.solve(warm.as_ref().map(|(x, y)| (x.as_slice(), y.as_slice())));
        let out = unpack_srb(&sol, qp, reference, weights);
        self.previous = Some(sol);
        Ok(out)
    }

    /// Solve without touching the stored warm start.
    pub fn solve_cold(&self, qp: &SrbQp, reference: &SrbReference, weights: &MpcWeights) -> Result<MpcSolution, MpcError> {
        let sol = crate::qp::solve(&qp.problem, &self.settings, None)?;
        Ok(unpack_srb(&sol, qp, reference, weights))
    }
}

/// Drop the first stage and repeat the last one.
pub(crate) fn shift_warm_start(prev: &QpSolution, stage_vars: usize, stage_rows: usize) -> (Vec<f64>, Vec<f64>) {
    let shift = |v: &[f64], stride: usize| {
        let mut out = Vec::with_capacity(v.len());
        if v.len() >= 2 * stride {
            out.extend_from_slice(&v[stride..]);
            out.extend_from_slice(&v[v.len() - stride..]);
        } else {
            out.extend_from_slice(v);
        }
        out
    };
    let x = shift(&prev.x, stage_vars);
    let mut y = shift(&prev.y, stage_rows);
    let len = y.len();
    if len >= stage_rows {
        y[len - stage_rows..].iter_mut().for_each(|v| *v = 0.0);
    }
    (x, y)
}

fn unpack_srb(sol: &QpSolution, qp: &SrbQp, reference: &SrbReference, weights: &MpcWeights) -> MpcSolution {
    let layout = qp.layout;
    let n = layout.horizon;
    let mut states = Vec::with_capacity(n + 1);
    states.push(qp.x0);
    let mut grfs = Vec::with_capacity(n);
    for k in 0..n {
        let f0 = layout.f(k);
        let mut f = Vec2::new(sol.x[f0], sol.x[f0 + 1]);
        if !qp.ltv[k].contact {
            f = Vec2::zeros();
        }
        grfs.push(f);
        let x0 = layout.x(k + 1);
        states.push(SrbVec::from_column_slice(&sol.x[x0..x0 + NX]));
    }
    let objective = tracking_objective(reference, weights, &states, &grfs);
    MpcSolution {
        states,
        grfs,
        joints: vec![None; n],
        torques: vec![None; n],
        status: sol.status,
        iterations: sol.iterations,
        primal_residual: sol.primal_residual,
        dual_residual: sol.dual_residual,
        max_violation: sol.primal_residual,
        degraded: false,
        ik_clamped: false,
        objective,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hover_reference(n: usize, dt: f64, model: &SrbModel) -> SrbReference {
        let x = SrbVec::from([0.0, 0.28, 0.0, 0.0, 0.0, 0.0]);
        SrbReference {
            steps: (0..n)
                .map(|k| HorizonStep {
                    t: k as f64 * dt,
                    dt,
                    contact: true,
                })
                .collect(),
            x_des: vec![x; n + 1],
            f_des: vec![Vec2::new(0.0, model.mass * model.gravity); n],
            foot: Vec2::new(0.0, 0.0),
        }
    }

    #[test]
    fn hover_is_a_fixed_point_of_the_linearization() {
        let m = SrbModel::default();
        let x = SrbVec::from([0.1, 0.28, 0.0, 0.0, 0.0, 0.0]);
        let f = Vec2::new(0.0, m.mass * m.gravity);
        for method in [Discretization::ForwardEuler, Discretization::SecondOrder] {
            let s = linearize_discretize(&x, &Vec2::new(0.1, 0.0), &f, &m, 0.03, true, method);
            let next = s.a * x + s.b * f + s.d;
            assert!((next - x).norm() < 1e-14);
        }
    }

    #[test]
    fn flight_step_is_ballistic() {
        let m = SrbModel::default();
        let x = SrbVec::from([0.1, 0.4, 0.05, 1.0, 0.5, 0.2]);
        let s = linearize_discretize(&x, &Vec2::new(0.3, 0.0), &Vec2::new(3.0, 20.0), &m, 0.05, false, Discretization::ForwardEuler);
        assert_eq!(s.b, Matrix6x2::zeros());
        let mut expected = Matrix6::identity();
        for i in 0..3 {
            expected[(i, i + 3)] = 0.05;
        }
        assert_eq!(s.a, expected);
        assert_eq!(s.d, SrbVec::from([0.0, 0.0, 0.0, 0.0, -m.gravity * 0.05, 0.0]));
    }

    #[test]
    fn pattern_covers_all_nonzeros() {
        let m = SrbModel::default();
        let x = SrbVec::from([0.1, 0.3, 0.05, 1.0, 0.5, 0.2]);
        let s = linearize_discretize(&x, &Vec2::new(0.2, 0.0), &Vec2::new(5.0, 30.0), &m, 0.05, true, Discretization::SecondOrder);
        for i in 0..6 {
            for j in 0..6 {
                if !a_pattern(i, j) {
                    assert_eq!(s.a[(i, j)], 0.0, "({i}, {j})");
                }
            }
        }
    }

    #[test]
    fn hover_qp_holds_weight() {
        let m = SrbModel::default();
        let w = MpcWeights::default();
        let r = hover_reference(10, 0.03, &m);
        let qp = build_srb_qp(&r, &r.x_des[0], &w, &m, Discretization::ForwardEuler).unwrap();
        let mpc = SrbMpc::new(SolverSettings::default());
        let sol = mpc.solve_cold(&qp, &r, &w).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);
        for f in &sol.grfs {
            assert!((f.y - m.mass * m.gravity).abs() < 1e-3, "{f:?}");
            assert!(f.x.abs() < 1e-3);
        }
    }

    #[test]
    fn flight_horizon_is_ballistic() {
        let m = SrbModel::default();
        let w = MpcWeights::default();
        let mut r = hover_reference(10, 0.03, &m);
        for s in &mut r.steps {
            s.contact = false;
        }
        let x0 = SrbVec::from([0.0, 0.4, 0.0, 1.0, 1.0, 0.0]);
        let qp = build_srb_qp(&r, &x0, &w, &m, Discretization::ForwardEuler).unwrap();
        let sol = SrbMpc::new(SolverSettings::default()).solve_cold(&qp, &r, &w).unwrap();
        let mut x = x0;
        for k in 0..10 {
            assert!(sol.grfs[k].norm() == 0.0);
            x = qp.ltv[k].a * x + qp.ltv[k].d;
            assert!((sol.states[k + 1] - x).amax() < 1e-4);
        }
    }

    #[test]
    fn bad_gamma_rejected() {
        let m = SrbModel::default();
        let w = MpcWeights {
            gamma: 1.0,
            ..Default::default()
        };
        let r = hover_reference(10, 0.03, &m);
        assert!(matches!(
            build_srb_qp(&r, &r.x_des[0], &w, &m, Discretization::ForwardEuler),
            Err(MpcError::Weights(_))
        ));
    }
}
