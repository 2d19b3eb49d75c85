//! Kinodynamic MPC: the SRB model plus stance-leg kinematics and motor
//! torques, solved by a fixed number of SQP iterations warm-started from the
//! SRB plan.
//!
//! Per stage `k` the decision vector holds `[f_k, x_{k+1}]`, followed by
//! `[q_k, tau_k]` when step `k` is in stance. Rows per stage are
//! `[dynamics (6), cone (4), state trust (3)]` and, in stance,
//! `[foot position (2), torque coupling (2), torque box (2), joint box (2)]`.
//! The pattern depends only on the contact schedule.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::Matrix2;
#[allow(unused_imports)] // float math lives in std when it is linked
use num_traits::Float;

use crate::kinematics::{rotation, rotation_derivative, LegGeometry, UpsModel};
use crate::qp::{CscMatrix, QpProblem, QpSolver, QpStatus, SolverSettings, INF_BOUND};
use crate::srb_mpc::{
    a_pattern, build_ltv, push_cone_rows, stage_weight, tracking_objective, Discretization, LtvStep, MpcError,
    MpcSolution, MpcWeights, SrbModel, SrbReference, SrbVec, NF, NX,
};
use crate::state::{RobotConstants, Vec2};

const BASE_ROWS: usize = NX + 4 + 3;
const LEG_ROWS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqpSettings {
    pub outer_iterations: usize,
    pub constraint_tolerance: f64,
    pub gn_damping: f64,
    /// Per-iteration step bound on joint angles and pitch (rad).
    pub trust_angle: f64,
    /// Per-iteration step bound on CoM position (m).
    pub trust_position: f64,
    /// Per-iteration step bound on GRF components (N).
    pub trust_force: f64,
    pub qp: SolverSettings,
}

impl Default for SqpSettings {
    fn default() -> Self {
        Self {
            outer_iterations: 2,
            constraint_tolerance: 1e-3,
            gn_damping: 1e-6,
            trust_angle: 0.1,
            trust_position: 0.2,
            trust_force: 50.0,
            qp: SolverSettings::default(),
        }
    }
}

impl SqpSettings {
    pub fn validate(&self) -> Result<(), MpcError> {
        let pos = [
            self.constraint_tolerance,
            self.gn_damping,
            self.trust_angle,
            self.trust_position,
            self.trust_force,
        ];
        if self.outer_iterations == 0 || pos.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(MpcError::Weights("SQP settings must be positive"));
        }
        self.qp.validate()?;
        Ok(())
    }
}

/// Column and row offsets of one stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KinoStage {
    pub f: usize,
    /// Column of `x_{k+1}`.
    pub x_next: usize,
    /// Column of `q_k`; `tau_k` follows at `+2`.
    pub joints: Option<usize>,
    pub row: usize,
}

impl KinoStage {
    pub fn tau(&self) -> Option<usize> {
        self.joints.map(|j| j + 2)
    }

    pub fn leg_row(&self) -> Option<usize> {
        self.joints.map(|_| self.row + BASE_ROWS)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KinoLayout {
    pub stages: Vec<KinoStage>,
    pub n_vars: usize,
    pub n_rows: usize,
}

impl KinoLayout {
    pub fn new(contact: &[bool]) -> Self {
        let mut stages = Vec::with_capacity(contact.len());
        let (mut col, mut row) = (0, 0);
        for &c in contact {
            let joints = c.then_some(col + NF + NX);
            stages.push(KinoStage {
                f: col,
                x_next: col + NF,
                joints,
                row,
            });
            col += NF + NX + if c { 4 } else { 0 };
            row += BASE_ROWS + if c { LEG_ROWS } else { 0 };
        }
        Self {
            stages,
            n_vars: col,
            n_rows: row,
        }
    }

    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    /// Column of `x_k`, `k >= 1`.
    pub fn x(&self, k: usize) -> usize {
        self.stages[k - 1].x_next
    }

    fn stage_rows(&self, k: usize) -> usize {
        BASE_ROWS + if self.stages[k].joints.is_some() { LEG_ROWS } else { 0 }
    }
}

/// Structured view of a decision vector.
#[derive(Debug, Clone, PartialEq)]
pub struct KinoDecision {
    /// `N + 1` states, the first being the fixed initial state.
    pub states: Vec<SrbVec>,
    pub grfs: Vec<Vec2>,
    pub joints: Vec<Option<Vec2>>,
    pub torques: Vec<Option<Vec2>>,
}

impl KinoDecision {
    pub fn pack(&self, layout: &KinoLayout) -> Vec<f64> {
        let mut z = vec![0.0; layout.n_vars];
        for (k, st) in layout.stages.iter().enumerate() {
            z[st.f..st.f + 2].copy_from_slice(self.grfs[k].as_slice());
            z[st.x_next..st.x_next + NX].copy_from_slice(self.states[k + 1].as_slice());
            if let Some(j) = st.joints {
                let q = self.joints[k].unwrap_or_else(Vec2::zeros);
                let t = self.torques[k].unwrap_or_else(Vec2::zeros);
                z[j..j + 2].copy_from_slice(q.as_slice());
                z[j + 2..j + 4].copy_from_slice(t.as_slice());
            }
        }
        z
    }

    pub fn unpack(layout: &KinoLayout, z: &[f64], x0: &SrbVec) -> Self {
        let n = layout.horizon();
        let mut d = Self {
            states: Vec::with_capacity(n + 1),
            grfs: Vec::with_capacity(n),
            joints: Vec::with_capacity(n),
            torques: Vec::with_capacity(n),
        };
        d.states.push(*x0);
        for st in &layout.stages {
            d.grfs.push(Vec2::new(z[st.f], z[st.f + 1]));
            d.states.push(SrbVec::from_column_slice(&z[st.x_next..st.x_next + NX]));
            d.joints.push(st.joints.map(|j| Vec2::new(z[j], z[j + 1])));
            d.torques.push(st.joints.map(|j| Vec2::new(z[j + 2], z[j + 3])));
        }
        d
    }
}

/// Everything fixed during one kinodynamic solve.
#[derive(Debug, Clone, PartialEq)]
pub struct KinoProblem {
    pub reference: SrbReference,
    pub ltv: Vec<LtvStep>,
    pub x0: SrbVec,
    pub weights: MpcWeights,
    pub model: SrbModel,
    pub geometry: LegGeometry,
    pub ups: UpsModel,
    pub q_min: Vec2,
    pub q_max: Vec2,
    pub tau_max: Vec2,
    pub layout: KinoLayout,
}

impl KinoProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        reference: &SrbReference,
        x0: &SrbVec,
        weights: &MpcWeights,
        constants: &RobotConstants,
        geometry: &LegGeometry,
        ups: &UpsModel,
        method: Discretization,
    ) -> Result<Self, MpcError> {
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
        let model = SrbModel::from(constants);
        let ltv = build_ltv(reference, &model, method)?;
        let contact: Vec<bool> = ltv.iter().map(|s| s.contact).collect();
        Ok(Self {
            reference: reference.clone(),
            ltv,
            x0: *x0,
            weights: *weights,
            model,
            geometry: *geometry,
            ups: *ups,
            q_min: constants.q_min,
            q_max: constants.q_max,
            tau_max: constants.tau_max,
            layout: KinoLayout::new(&contact),
        })
    }

    fn state(&self, z: &[f64], k: usize) -> SrbVec {
        if k == 0 {
            self.x0
        } else {
            let c = self.layout.x(k);
            SrbVec::from_column_slice(&z[c..c + NX])
        }
    }

    /// Diagonal Hessian, linear term and constant of the tracking cost
    /// `J(z) = sum_i (h_i z_i^2 / 2 + g_i z_i) + c`.
    pub fn cost_terms(&self) -> (Vec<f64>, Vec<f64>, f64) {
        let w = &self.weights;
        let mut h = vec![0.0; self.layout.n_vars];
        let mut g = vec![0.0; self.layout.n_vars];
        let mut c = 0.0;
        let mut add = |col: usize, weight: f64, target: f64| {
            h[col] += 2.0 * weight;
            g[col] -= 2.0 * weight * target;
            c += weight * target * target;
        };
        for (k, st) in self.layout.stages.iter().enumerate() {
            let wk = stage_weight(w.gamma, k);
            for i in 0..NF {
                add(st.f + i, wk * w.r_f[i], self.reference.f_des[k][i]);
            }
            let wn = stage_weight(w.gamma, k + 1);
            for i in 0..NX {
                add(st.x_next + i, wn * w.q[i], self.reference.x_des[k + 1][i]);
            }
            if let Some(t) = st.tau() {
                for i in 0..2 {
                    add(t + i, wk * w.r_tau[i], 0.0);
                }
            }
        }
        (h, g, c)
    }

    pub fn objective(&self, z: &[f64]) -> f64 {
        let (h, g, c) = self.cost_terms();
        z.iter()
            .zip(h.iter().zip(&g))
            .map(|(zi, (hi, gi))| 0.5 * hi * zi * zi + gi * zi)
            .sum::<f64>()
            + c
    }

    pub fn objective_gradient(&self, z: &[f64]) -> Vec<f64> {
        let (h, g, _) = self.cost_terms();
        z.iter().zip(h.iter().zip(&g)).map(|(zi, (hi, gi))| hi * zi + gi).collect()
    }

    /// Decision built from an SRB plan: stance joints by IK against the
    /// sketch foothold, torques from the massless-leg statics.
    pub fn initial_decision(&self, srb: &MpcSolution) -> (KinoDecision, bool) {
        let n = self.layout.horizon();
        let mut clamped = false;
        let mut d = KinoDecision {
            states: srb.states.clone(),
            grfs: srb.grfs.clone(),
            joints: vec![None; n],
            torques: vec![None; n],
        };
        d.states[0] = self.x0;
        for (k, st) in self.layout.stages.iter().enumerate() {
            if st.joints.is_none() {
                d.grfs[k] = Vec2::zeros();
                continue;
            }
            let x = &d.states[k];
            let com = Vec2::new(x[0], x[1]);
            let (q, c) = self.geometry.inverse_kinematics_clamped(&com, x[2], &self.reference.foot);
            clamped |= c;
            let tau = self.geometry.motor_torque_for_grf(x[2], &q, &d.grfs[k], &self.ups);
            d.joints[k] = Some(q);
            d.torques[k] = Some(tau);
        }
        (d, clamped)
    }
}

/// Constraint functions `lower <= g(z) <= upper` and their Jacobian.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintEval {
    pub value: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub jacobian: CscMatrix,
}

impl ConstraintEval {
    /// Largest distance of any row from its bounds.
    pub fn max_violation(&self) -> f64 {
        self.value
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (l, u))| (l - v).max(v - u).max(0.0))
            .fold(0.0, f64::max)
    }
}

pub fn evaluate_constraints(problem: &KinoProblem, z: &[f64]) -> ConstraintEval {
    let layout = &problem.layout;
    let m = layout.n_rows;
    let mut value = vec![0.0; m];
    let mut lower = vec![0.0; m];
    let mut upper = vec![0.0; m];
    let mut trip = Vec::with_capacity(m * 8);
    let geo = &problem.geometry;
    let foot = problem.reference.foot;

    for (k, st) in layout.stages.iter().enumerate() {
        let step = &problem.ltv[k];
        let xk = problem.state(z, k);
        let f = Vec2::new(z[st.f], z[st.f + 1]);
        let x_next = problem.state(z, k + 1);
        let r = st.row;

        // x_{k+1} - A x_k - B f_k = d_k
        let g = x_next - if k == 0 { SrbVec::zeros() } else { step.a * xk } - step.b * f;
        let rhs = if k == 0 { step.d + step.a * problem.x0 } else { step.d };
        for i in 0..NX {
            value[r + i] = g[i];
            lower[r + i] = rhs[i];
            upper[r + i] = rhs[i];
            trip.push((r + i, st.x_next + i, 1.0));
            if k > 0 {
                let xc = layout.x(k);
                for j in 0..NX {
                    if a_pattern(i, j) {
                        trip.push((r + i, xc + j, -step.a[(i, j)]));
                    }
                }
            }
            for j in 0..NF {
                trip.push((r + i, st.f + j, -step.b[(i, j)]));
            }
        }

        let cr = r + NX;
        push_cone_rows(&mut trip, &mut lower, &mut upper, cr, st.f, problem.model.friction, step.f_max);
        let mu = problem.model.friction;
        value[cr] = f.x - mu * f.y;
        value[cr + 1] = f.x + mu * f.y;
        value[cr + 2] = f.y;
        value[cr + 3] = f.x;

        let tr = cr + 4;
        for i in 0..3 {
            value[tr + i] = x_next[i];
            lower[tr + i] = -INF_BOUND;
            upper[tr + i] = INF_BOUND;
            trip.push((tr + i, st.x_next + i, 1.0));
        }

        if let (Some(jc), Some(lr)) = (st.joints, st.leg_row()) {
            let tc = jc + 2;
            let q = Vec2::new(z[jc], z[jc + 1]);
            let tau = Vec2::new(z[tc], z[tc + 1]);
            let com = Vec2::new(xk[0], xk[1]);
            let pitch = xk[2];
            let rot = rotation(pitch);
            let drot = rotation_derivative(pitch);
            let chain = geo.hip_offset_body + geo.leg_chain(&q);
            let cj = geo.chain_jacobian(&q);
            let jq = rot * cj;

            // FK(p_c, theta, q) = foothold
            let p = geo.forward_kinematics(&com, pitch, &q);
            let dtheta = drot * chain;
            for i in 0..2 {
                value[lr + i] = p[i];
                lower[lr + i] = foot[i];
                upper[lr + i] = foot[i];
                if k > 0 {
                    let xc = layout.x(k);
                    trip.push((lr + i, xc + i, 1.0));
                    trip.push((lr + i, xc + 2, dtheta[i]));
                }
                for j in 0..2 {
                    trip.push((lr + i, jc + j, jq[(i, j)]));
                }
            }

            // tau + tau_s(q) + J_q^T f = 0
            let fb = rot.transpose() * f;
            let dfb = drot.transpose() * f;
            let coupling = tau + problem.ups.torque_vec(&q) + jq.transpose() * f;
            let hess = geo.chain_hessian(&q);
            let mut dq = Matrix2::zeros();
            for i in 0..2 {
                for j in 0..2 {
                    dq[(i, j)] = hess[i][j].dot(&fb);
                }
            }
            dq[(1, 1)] += problem.ups.torque_derivative(q.y);
            let dth = cj.transpose() * dfb;
            let cr2 = lr + 2;
            for i in 0..2 {
                value[cr2 + i] = coupling[i];
                lower[cr2 + i] = 0.0;
                upper[cr2 + i] = 0.0;
                trip.push((cr2 + i, tc + i, 1.0));
                for j in 0..2 {
                    trip.push((cr2 + i, st.f + j, jq[(j, i)]));
                }
                for j in 0..2 {
                    trip.push((cr2 + i, jc + j, dq[(i, j)]));
                }
                if k > 0 {
                    trip.push((cr2 + i, layout.x(k) + 2, dth[i]));
                }
            }

            let br = lr + 4;
            for i in 0..2 {
                value[br + i] = tau[i];
                lower[br + i] = -problem.tau_max[i];
                upper[br + i] = problem.tau_max[i];
                trip.push((br + i, tc + i, 1.0));
                value[br + 2 + i] = q[i];
                lower[br + 2 + i] = problem.q_min[i];
                upper[br + 2 + i] = problem.q_max[i];
                trip.push((br + 2 + i, jc + i, 1.0));
            }
        }
    }
    ConstraintEval {
        value,
        lower,
        upper,
        jacobian: CscMatrix::from_triplets(m, layout.n_vars, &trip),
    }
}

/// Step bound per row; rows without a bound get infinity.
fn row_trust(layout: &KinoLayout, settings: &SqpSettings) -> Vec<f64> {
    let mut t = vec![f64::INFINITY; layout.n_rows];
    for st in &layout.stages {
        let cr = st.row + NX;
        t[cr + 2] = settings.trust_force;
        t[cr + 3] = settings.trust_force;
        t[cr + 4] = settings.trust_position;
        t[cr + 5] = settings.trust_position;
        t[cr + 6] = settings.trust_angle;
        if let Some(lr) = st.leg_row() {
            t[lr + 6] = settings.trust_angle;
            t[lr + 7] = settings.trust_angle;
        }
    }
    t
}

/// Local QP in the step `d`: Gauss-Newton Hessian of the tracking cost plus
/// damping, linearized constraints, and the trust box.
pub fn build_sqp_subproblem(problem: &KinoProblem, z: &[f64], settings: &SqpSettings) -> Result<QpProblem, MpcError> {
    let (h, _, _) = problem.cost_terms();
    let grad = problem.objective_gradient(z);
    let eval = evaluate_constraints(problem, z);
    let trust = row_trust(&problem.layout, settings);
    let n = problem.layout.n_vars;
    let p = CscMatrix::diagonal(&h.iter().map(|v| v + settings.gn_damping).collect::<Vec<_>>());
    debug_assert_eq!(p.ncols, n);
    let shift = |b: f64, v: f64| {
        if b <= -INF_BOUND {
            -INF_BOUND
        } else if b >= INF_BOUND {
            INF_BOUND
        } else {
            b - v
        }
    };
    let mut lower = Vec::with_capacity(eval.value.len());
    let mut upper = Vec::with_capacity(eval.value.len());
    for i in 0..eval.value.len() {
        let lo = shift(eval.lower[i], eval.value[i]);
        let hi = shift(eval.upper[i], eval.value[i]);
        let t = trust[i];
        let (lt, ht) = (lo.max(-t), hi.min(t));
        // a trust box that excludes the feasible set is dropped for that row
        if lt <= ht {
            lower.push(lt);
            upper.push(ht);
        } else {
            lower.push(lo);
            upper.push(hi);
        }
    }
    Ok(QpProblem::new(p, grad, eval.jacobian, lower, upper)?)
}

/// Fixed-iteration SQP solver that keeps the QP workspace and duals between
/// control cycles.
#[derive(Debug, Clone)]
pub struct KinoMpc {
    settings: SqpSettings,
    solver: Option<QpSolver>,
    /// Duals of the last subproblem and the row count of its first stage.
    duals: Option<(Vec<f64>, usize)>,
}

impl KinoMpc {
    pub fn new(settings: SqpSettings) -> Result<Self, MpcError> {
        settings.validate()?;
        Ok(Self {
            settings,
            solver: None,
            duals: None,
        })
    }

    pub fn settings(&self) -> &SqpSettings {
        &self.settings
    }

    pub fn reset(&mut self) {
        self.duals = None;
    }

    /// Run the configured number of SQP iterations from the SRB plan.
    pub fn solve(&mut self, problem: &KinoProblem, srb: &MpcSolution) -> Result<MpcSolution, MpcError> {
        if srb.horizon() != problem.layout.horizon() {
            return Err(MpcError::Horizon {
                expected: problem.layout.horizon(),
                got: srb.horizon(),
            });
        }
        let (init, ik_clamped) = problem.initial_decision(srb);
        let mut z = init.pack(&problem.layout);
        let m = problem.layout.n_rows;
        let mut y = match self.duals.take() {
            Some((prev, first)) => {
                let mut y: Vec<f64> = prev.get(first..).unwrap_or(&[]).to_vec();
                y.resize(m, 0.0);
                y
            }
            None => vec![0.0; m],
        };

        let mut degraded = false;
        let mut status = QpStatus::Solved;
        let mut iterations = 0;
        let (mut prim, mut dual) = (0.0, 0.0);
        let zero = vec![0.0; problem.layout.n_vars];
        for _ in 0..self.settings.outer_iterations {
            let sub = build_sqp_subproblem(problem, &z, &self.settings)?;
            match &mut self.solver {
                Some(s) => s.update_problem(sub)?,
                None => self.solver = Some(QpSolver::new(sub, self.settings.qp)?),
            }
            let solver = self.solver.as_mut().unwrap();
            let sol = solver.solve(Some((&zero, &y)));
            iterations += sol.iterations;
            status = sol.status;
            prim = sol.primal_residual;
            dual = sol.dual_residual;
            let finite = sol.x.iter().chain(&sol.y).all(|v| v.is_finite());
            if matches!(sol.status, QpStatus::PrimalInfeasible | QpStatus::DualInfeasible) || !finite {
                degraded = true;
                break;
            }
            for (zi, di) in z.iter_mut().zip(&sol.x) {
                *zi += di;
            }
            y = sol.y;
        }
        let first_rows = problem.layout.stage_rows(0);
        self.duals = Some((y, first_rows));

        let eval = evaluate_constraints(problem, &z);
        let d = KinoDecision::unpack(&problem.layout, &z, &problem.x0);
        let mut grfs = d.grfs;
        for (k, st) in problem.layout.stages.iter().enumerate() {
            if st.joints.is_none() {
                grfs[k] = Vec2::zeros();
            }
        }
        let objective = tracking_objective(&problem.reference, &problem.weights, &d.states, &grfs)
            + torque_cost(problem, &d.torques);
        Ok(MpcSolution {
            states: d.states,
            grfs,
            joints: d.joints,
            torques: d.torques,
            status,
            iterations,
            primal_residual: prim,
            dual_residual: dual,
            max_violation: eval.max_violation(),
            degraded,
            ik_clamped,
            objective,
        })
    }
}

fn torque_cost(problem: &KinoProblem, torques: &[Option<Vec2>]) -> f64 {
    let w = &problem.weights;
    torques
        .iter()
        .enumerate()
        .filter_map(|(k, t)| t.map(|t| (k, t)))
        .map(|(k, t)| stage_weight(w.gamma, k) * (w.r_tau[0] * t.x * t.x + w.r_tau[1] * t.y * t.y))
        .sum()
}

/// First-step motor torque of a plan, clamped to the actuator limits.
pub fn torque_extraction(solution: &MpcSolution, tau_max: &Vec2) -> Result<Vec2, MpcError> {
    match solution.torques.first().copied().flatten() {
        Some(t) => Ok(Vec2::new(t.x.clamp(-tau_max.x, tau_max.x), t.y.clamp(-tau_max.y, tau_max.y))),
        None => Err(MpcError::FlightAtFirstStep),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::srb_mpc::{build_srb_qp, HorizonStep, SrbMpc};

    fn hover(n: usize, constants: &RobotConstants) -> SrbReference {
        let x = SrbVec::from([0.0, 0.28, 0.0, 0.0, 0.0, 0.0]);
        SrbReference {
            steps: (0..n)
                .map(|k| HorizonStep {
                    t: k as f64 * 0.03,
                    dt: 0.03,
                    contact: true,
                })
                .collect(),
            x_des: vec![x; n + 1],
            f_des: vec![Vec2::new(0.0, constants.weight()); n],
            foot: Vec2::zeros(),
        }
    }

    #[test]
    fn layout_packs_stance_variables_only_in_stance() {
        let l = KinoLayout::new(&[true, false, true]);
        assert_eq!(l.n_vars, 12 + 8 + 12);
        assert_eq!(l.n_rows, 21 + 13 + 21);
        assert_eq!(l.stages[1].joints, None);
        assert_eq!(l.stages[2].joints, Some(20 + 8));
        let d = KinoDecision {
            states: (0..4).map(|k| SrbVec::from_element(k as f64)).collect(),
            grfs: vec![Vec2::new(1.0, 2.0); 3],
            joints: vec![Some(Vec2::new(0.5, -1.5)), None, Some(Vec2::new(0.4, -1.4))],
            torques: vec![Some(Vec2::new(3.0, 4.0)), None, Some(Vec2::new(5.0, 6.0))],
        };
        let z = d.pack(&l);
        assert_eq!(KinoDecision::unpack(&l, &z, &d.states[0]), d);
    }

    #[test]
    fn initial_decision_satisfies_kinematics() {
        let c = RobotConstants::default();
        let w = MpcWeights::default();
        let r = hover(10, &c);
        let p = KinoProblem::new(&r, &r.x_des[0], &w, &c, &LegGeometry::default(), &UpsModel::default(), Discretization::ForwardEuler)
            .unwrap();
        let srb_qp = build_srb_qp(&r, &r.x_des[0], &w, &p.model, Discretization::ForwardEuler).unwrap();
        let srb = SrbMpc::new(SolverSettings::default()).solve_cold(&srb_qp, &r, &w).unwrap();
        let (d, clamped) = p.initial_decision(&srb);
        assert!(!clamped);
        let e = evaluate_constraints(&p, &d.pack(&p.layout));
        for st in &p.layout.stages {
            let lr = st.leg_row().unwrap();
            for i in 0..4 {
                assert!((e.value[lr + i] - e.lower[lr + i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn torque_rows_without_spring_are_plain_coupling() {
        let c = RobotConstants::default();
        let w = MpcWeights::default();
        let r = hover(3, &c);
        let w = MpcWeights { horizon: 3, ..w };
        let geo = LegGeometry::default();
        let p = KinoProblem::new(&r, &r.x_des[0], &w, &c, &geo, &UpsModel::disabled(), Discretization::ForwardEuler).unwrap();
        let d = KinoDecision {
            states: vec![r.x_des[0]; 4],
            grfs: vec![Vec2::new(3.0, 20.0); 3],
            joints: vec![Some(Vec2::new(0.7, -1.6)); 3],
            torques: vec![Some(Vec2::new(1.0, -2.0)); 3],
        };
        let e = evaluate_constraints(&p, &d.pack(&p.layout));
        let lr = p.layout.stages[1].leg_row().unwrap();
        let expect = Vec2::new(1.0, -2.0) + geo.selected_jt_force(0.0, &Vec2::new(0.7, -1.6), &Vec2::new(3.0, 20.0));
        assert_eq!(e.value[lr + 2], expect.x);
        assert_eq!(e.value[lr + 3], expect.y);
    }

    #[test]
    fn extraction_clamps_and_rejects_flight() {
        let tau_max = Vec2::new(25.0, 25.0);
        let mut s = MpcSolution {
            states: vec![],
            grfs: vec![Vec2::zeros()],
            joints: vec![Some(Vec2::zeros())],
            torques: vec![Some(Vec2::new(25.1, -3.0))],
            status: QpStatus::Solved,
            iterations: 0,
            primal_residual: 0.0,
            dual_residual: 0.0,
            max_violation: 0.0,
            degraded: true,
            ik_clamped: false,
            objective: 0.0,
        };
        assert_eq!(torque_extraction(&s, &tau_max).unwrap(), Vec2::new(25.0, -3.0));
        s.torques[0] = Some(Vec2::new(-4.0, 12.0));
        assert_eq!(torque_extraction(&s, &tau_max).unwrap(), Vec2::new(-4.0, 12.0));
        s.torques[0] = None;
        assert_eq!(torque_extraction(&s, &tau_max), Err(MpcError::FlightAtFirstStep));
    }
}
