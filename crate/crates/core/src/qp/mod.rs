//! Sparse convex QP
//!
//! ```text
//! minimize    ½ xᵀ P x + qᵀ x
//! subject to  l ≤ A x ≤ u
//! ```
//!
//! solved by an ADMM operator-splitting method on the quasi-definite KKT
//! system, factored once with a sparse LDLᵀ and refactored numerically when
//! only values change. Equalities use `l = u`; bounds beyond `±INF_BOUND` are
//! treated as absent. `P` is passed as its upper triangle.

pub mod csc;
pub mod ldl;

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // float math lives in std when it is linked
use num_traits::Float;
use thiserror::Error;

pub use csc::CscMatrix;
pub use ldl::{Ldl, LdlError};

/// Bounds at or beyond this magnitude count as infinite.
pub const INF_BOUND: f64 = 1e20;
const RHO_MIN: f64 = 1e-6;
const RHO_EQ_FACTOR: f64 = 1e3;
const MIN_SCALING: f64 = 1e-4;
const MAX_SCALING: f64 = 1e4;
const PSD_SHIFT: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(&'static str),
    #[error("cost matrix must be given as its upper triangle")]
    NotUpperTriangular,
    #[error("cost matrix is not positive semidefinite")]
    NotPsd,
    #[error("lower bound exceeds upper bound in row {0}")]
    InvalidBounds(usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("sparsity pattern differs from the factored problem")]
    PatternChanged,
    #[error("invalid setting: {0}")]
    Settings(&'static str),
    #[error("KKT factorization failed: {0}")]
    Factorization(#[from] LdlError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    /// Upper triangle of the cost matrix.
    pub p: CscMatrix,
    pub q: Vec<f64>,
    pub a: CscMatrix,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

fn check_finite(name: &'static str, v: &[f64]) -> Result<(), QpError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(QpError::NonFinite(name))
    }
}

fn check_bounds(lower: &[f64], upper: &[f64]) -> Result<(), QpError> {
    for (i, (l, u)) in lower.iter().zip(upper).enumerate() {
        if l.is_nan() || u.is_nan() || l > u {
            return Err(QpError::InvalidBounds(i));
        }
    }
    Ok(())
}

/// Positive semidefiniteness via an LDLᵀ of `P + εI`.
fn check_psd(p: &CscMatrix) -> Result<(), QpError> {
    let n = p.ncols;
    let mut t: Vec<(usize, usize, f64)> = p.iter().collect();
    t.extend((0..n).map(|i| (i, i, PSD_SHIFT)));
    let shifted = CscMatrix::from_triplets(n, n, &t);
    match Ldl::new(&shifted) {
        Ok(f) if f.positive_pivots() == n => Ok(()),
        _ => Err(QpError::NotPsd),
    }
}

impl QpProblem {
    pub fn new(
        p: CscMatrix,
        q: Vec<f64>,
        a: CscMatrix,
        lower: Vec<f64>,
        upper: Vec<f64>,
    ) -> Result<Self, QpError> {
        let prob = Self {
            p,
            q,
            a,
            lower,
            upper,
        };
        prob.validate_structure()?;
        check_psd(&prob.p)?;
        Ok(prob)
    }

    fn validate_structure(&self) -> Result<(), QpError> {
        let n = self.q.len();
        if self.p.nrows != n || self.p.ncols != n {
            return Err(QpError::Dimension("P must be n x n"));
        }
        if !self.p.is_upper_triangular() {
            return Err(QpError::NotUpperTriangular);
        }
        if self.a.ncols != n {
            return Err(QpError::Dimension("A must have n columns"));
        }
        let m = self.a.nrows;
        if self.lower.len() != m || self.upper.len() != m {
            return Err(QpError::Dimension("bounds must have one entry per row of A"));
        }
        check_finite("P", &self.p.values)?;
        check_finite("q", &self.q)?;
        check_finite("A", &self.a.values)?;
        check_bounds(&self.lower, &self.upper)
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn m(&self) -> usize {
        self.lower.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let mut px = vec![0.0; self.n()];
        self.p.sym_upper_mul_add(x, &mut px);
        x.iter().zip(&px).map(|(a, b)| 0.5 * a * b).sum::<f64>()
            + x.iter().zip(&self.q).map(|(a, b)| a * b).sum::<f64>()
    }

    /// `(‖Ax − clamp(Ax)‖∞, ‖Px + q + Aᵀy‖∞)`.
    pub fn kkt_residuals(&self, x: &[f64], y: &[f64]) -> (f64, f64) {
        let mut ax = vec![0.0; self.m()];
        self.a.mul_add(x, &mut ax);
        let prim = ax
            .iter()
            .enumerate()
            .map(|(i, &v)| (v - v.clamp(self.lower[i], self.upper[i])).abs())
            .fold(0.0, f64::max);
        let mut g = self.q.clone();
        self.p.sym_upper_mul_add(x, &mut g);
        self.a.mul_t_add(y, &mut g);
        (prim, inf_norm(&g))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Solved,
    MaxIter,
    PrimalInfeasible,
    DualInfeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: Vec<f64>,
    /// Multipliers; positive at an active upper bound, negative at a lower.
    pub y: Vec<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub polished: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    pub rt_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    pub alpha_relax: f64,
    /// Run exactly `rt_iter` iterations and report the residuals reached.
    pub real_time: bool,
    /// Refine converged solutions by an equality-constrained solve on the
    /// detected active set. Skipped in real-time mode.
    pub polish: bool,
    pub adaptive_rho: bool,
    pub scaling_iter: usize,
    pub eps_prim_inf: f64,
    pub eps_dual_inf: f64,
    pub check_interval: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            eps_abs: 1e-4,
            eps_rel: 1e-4,
            max_iter: 4000,
            rt_iter: 50,
            rho: 0.1,
            sigma: 1e-6,
            alpha_relax: 1.6,
            real_time: false,
            polish: true,
            adaptive_rho: false,
            scaling_iter: 10,
            eps_prim_inf: 1e-5,
            eps_dual_inf: 1e-5,
            check_interval: 25,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<(), QpError> {
        let pos = [
            self.eps_abs,
            self.eps_rel,
            self.rho,
            self.sigma,
            self.eps_prim_inf,
            self.eps_dual_inf,
        ];
        if pos.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(QpError::Settings("tolerances, rho and sigma must be positive"));
        }
        if !(self.alpha_relax > 0.0 && self.alpha_relax < 2.0) {
            return Err(QpError::Settings("alpha_relax must lie in (0, 2)"));
        }
        if self.max_iter == 0 || self.rt_iter == 0 || self.check_interval == 0 {
            return Err(QpError::Settings("iteration counts must be positive"));
        }
        Ok(())
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn clamp_scaling(v: f64) -> f64 {
    if v < MIN_SCALING {
        1.0
    } else {
        v.min(MAX_SCALING)
    }
}

/// `Aᵀ` together with the position of each of its entries in `a.values`.
fn transpose_with_map(a: &CscMatrix) -> (CscMatrix, Vec<usize>) {
    let mut t: Vec<(usize, usize, usize)> = a.iter().enumerate().map(|(k, (r, c, _))| (r, c, k)).collect();
    t.sort_unstable();
    let mut col_ptr = vec![0; a.nrows + 1];
    let mut row_idx = Vec::with_capacity(t.len());
    let mut values = Vec::with_capacity(t.len());
    let mut map = Vec::with_capacity(t.len());
    for &(r, c, k) in &t {
        col_ptr[r + 1] += 1;
        row_idx.push(c);
        values.push(a.values[k]);
        map.push(k);
    }
    for i in 0..a.nrows {
        col_ptr[i + 1] += col_ptr[i];
    }
    (
        CscMatrix {
            nrows: a.ncols,
            ncols: a.nrows,
            col_ptr,
            row_idx,
            values,
        },
        map,
    )
}

/// Positions of the problem data inside the upper-triangular KKT pattern.
#[derive(Debug, Clone)]
struct KktLayout {
    pattern: CscMatrix,
    p_pos: Vec<usize>,
    p_diag_pos: Vec<usize>,
    a_pos: Vec<usize>,
    rho_pos: Vec<usize>,
}

impl KktLayout {
    fn new(p: &CscMatrix, a: &CscMatrix) -> Self {
        let n = p.ncols;
        let m = a.nrows;
        let (at, at_map) = transpose_with_map(a);
        let mut col_ptr = vec![0usize; n + m + 1];
        let mut row_idx = Vec::new();
        let mut p_pos = vec![0; p.nnz()];
        let mut p_diag_pos = vec![0; n];
        let mut a_pos = vec![0; a.nnz()];
        let mut rho_pos = vec![0; m];
        for j in 0..n {
            let mut has_diag = false;
            for k in p.col_ptr[j]..p.col_ptr[j + 1] {
                let r = p.row_idx[k];
                p_pos[k] = row_idx.len();
                if r == j {
                    has_diag = true;
                    p_diag_pos[j] = row_idx.len();
                }
                row_idx.push(r);
            }
            if !has_diag {
                p_diag_pos[j] = row_idx.len();
                row_idx.push(j);
            }
            col_ptr[j + 1] = row_idx.len();
        }
        for i in 0..m {
            for k in at.col_ptr[i]..at.col_ptr[i + 1] {
                a_pos[at_map[k]] = row_idx.len();
                row_idx.push(at.row_idx[k]);
            }
            rho_pos[i] = row_idx.len();
            row_idx.push(n + i);
            col_ptr[n + i + 1] = row_idx.len();
        }
        let nnz = row_idx.len();
        Self {
            pattern: CscMatrix {
                nrows: n + m,
                ncols: n + m,
                col_ptr,
                row_idx,
                values: vec![0.0; nnz],
            },
            p_pos,
            p_diag_pos,
            a_pos,
            rho_pos,
        }
    }

    fn values(&self, p: &CscMatrix, a: &CscMatrix, sigma: f64, rho: &[f64]) -> Vec<f64> {
        let mut v = vec![0.0; self.pattern.nnz()];
        for (k, &pos) in self.p_pos.iter().enumerate() {
            v[pos] = p.values[k];
        }
        for &pos in &self.p_diag_pos {
            v[pos] += sigma;
        }
        for (k, &pos) in self.a_pos.iter().enumerate() {
            v[pos] = a.values[k];
        }
        for (i, &pos) in self.rho_pos.iter().enumerate() {
            v[pos] = -1.0 / rho[i];
        }
        v
    }
}

/// Ruiz equilibration of the KKT matrix plus a cost scale.
///
/// The cost scale depends on `P` only, so changing `q` never changes the
/// scaled matrices.
#[derive(Debug, Clone)]
struct Scaling {
    d: Vec<f64>,
    e: Vec<f64>,
    c: f64,
}

impl Scaling {
    fn compute(p: &CscMatrix, a: &CscMatrix, iters: usize) -> (Self, CscMatrix, CscMatrix) {
        let n = p.ncols;
        let m = a.nrows;
        let mut ps = p.clone();
        let mut as_ = a.clone();
        let mut d = vec![1.0; n];
        let mut e = vec![1.0; m];
        let mut c = 1.0;
        let mut col = vec![0.0; n];
        let mut row = vec![0.0; m];
        for _ in 0..iters {
            col.iter_mut().for_each(|v| *v = 0.0);
            row.iter_mut().for_each(|v| *v = 0.0);
            for (r, cc, v) in ps.iter() {
                col[cc] = col[cc].max(v.abs());
                col[r] = col[r].max(v.abs());
            }
            for (r, cc, v) in as_.iter() {
                col[cc] = col[cc].max(v.abs());
                row[r] = row[r].max(v.abs());
            }
            let dd: Vec<f64> = col.iter().map(|&v| 1.0 / clamp_scaling(v).sqrt()).collect();
            let de: Vec<f64> = row.iter().map(|&v| 1.0 / clamp_scaling(v).sqrt()).collect();
            for cc in 0..n {
                for k in ps.col_ptr[cc]..ps.col_ptr[cc + 1] {
                    ps.values[k] *= dd[ps.row_idx[k]] * dd[cc];
                }
                for k in as_.col_ptr[cc]..as_.col_ptr[cc + 1] {
                    as_.values[k] *= de[as_.row_idx[k]] * dd[cc];
                }
            }
            for j in 0..n {
                d[j] *= dd[j];
            }
            for i in 0..m {
                e[i] *= de[i];
            }
            // Cost scaling from the mean column norm of P.
            col.iter_mut().for_each(|v| *v = 0.0);
            for (r, cc, v) in ps.iter() {
                col[cc] = col[cc].max(v.abs());
                col[r] = col[r].max(v.abs());
            }
            let mean = if n > 0 { col.iter().sum::<f64>() / n as f64 } else { 0.0 };
            let ct = 1.0 / clamp_scaling(mean);
            ps.values.iter_mut().for_each(|v| *v *= ct);
            c *= ct;
        }
        (Self { d, e, c }, ps, as_)
    }
}

/// ADMM solver bound to one problem pattern.
#[derive(Debug, Clone)]
pub struct QpSolver {
    settings: SolverSettings,
    problem: QpProblem,
    scaling: Scaling,
    ps: CscMatrix,
    as_: CscMatrix,
    qs: Vec<f64>,
    ls: Vec<f64>,
    us: Vec<f64>,
    rho: Vec<f64>,
    rho_scalar: f64,
    layout: KktLayout,
    kkt: Ldl,
    x: Vec<f64>,
    z: Vec<f64>,
    y: Vec<f64>,
}

fn scale_bound(b: f64, e: f64) -> f64 {
    if b >= INF_BOUND {
        f64::INFINITY
    } else if b <= -INF_BOUND {
        f64::NEG_INFINITY
    } else {
        b * e
    }
}

fn rho_vector(lower: &[f64], upper: &[f64], rho: f64) -> Vec<f64> {
    lower
        .iter()
        .zip(upper)
        .map(|(&l, &u)| {
            if l <= -INF_BOUND && u >= INF_BOUND {
                RHO_MIN
            } else if l == u {
                RHO_EQ_FACTOR * rho
            } else {
                rho
            }
        })
        .collect()
}

impl QpSolver {
    pub fn new(problem: QpProblem, settings: SolverSettings) -> Result<Self, QpError> {
        settings.validate()?;
        problem.validate_structure()?;
        let (scaling, ps, as_) = Scaling::compute(&problem.p, &problem.a, settings.scaling_iter);
        let layout = KktLayout::new(&problem.p, &problem.a);
        let rho = rho_vector(&problem.lower, &problem.upper, settings.rho);
        let mut pattern = layout.pattern.clone();
        pattern.values = layout.values(&ps, &as_, settings.sigma, &rho);
        let kkt = Ldl::new(&pattern)?;
        let n = problem.n();
        let m = problem.m();
        let mut s = Self {
            settings,
            scaling,
            ps,
            as_,
            qs: vec![0.0; n],
            ls: vec![0.0; m],
            us: vec![0.0; m],
            rho,
            rho_scalar: settings.rho,
            layout,
            kkt,
            x: vec![0.0; n],
            z: vec![0.0; m],
            y: vec![0.0; m],
            problem,
        };
        s.scale_vectors();
        Ok(s)
    }

    pub fn problem(&self) -> &QpProblem {
        &self.problem
    }

    pub fn settings(&self) -> &SolverSettings {
        &self.settings
    }

    pub fn set_settings(&mut self, settings: SolverSettings) -> Result<(), QpError> {
        settings.validate()?;
        let refactor = settings.rho != self.settings.rho
            || settings.sigma != self.settings.sigma
            || settings.scaling_iter != self.settings.scaling_iter;
        self.settings = settings;
        if refactor {
            let (scaling, ps, as_) = Scaling::compute(&self.problem.p, &self.problem.a, settings.scaling_iter);
            self.scaling = scaling;
            self.ps = ps;
            self.as_ = as_;
            self.scale_vectors();
            self.rho_scalar = settings.rho;
            self.rho = rho_vector(&self.problem.lower, &self.problem.upper, settings.rho);
            self.refactor()?;
        }
        Ok(())
    }

    fn scale_vectors(&mut self) {
        let sc = &self.scaling;
        for j in 0..self.qs.len() {
            self.qs[j] = sc.c * sc.d[j] * self.problem.q[j];
        }
        for i in 0..self.ls.len() {
            self.ls[i] = scale_bound(self.problem.lower[i], sc.e[i]);
            self.us[i] = scale_bound(self.problem.upper[i], sc.e[i]);
        }
    }

    fn refactor(&mut self) -> Result<(), QpError> {
        let v = self.layout.values(&self.ps, &self.as_, self.settings.sigma, &self.rho);
        self.kkt.refactor(&v)?;
        Ok(())
    }

    /// Replace `q`, `l`, `u` keeping the matrices and their factorization.
    pub fn update_vectors(&mut self, q: &[f64], lower: &[f64], upper: &[f64]) -> Result<(), QpError> {
        if q.len() != self.problem.n() || lower.len() != self.problem.m() || upper.len() != self.problem.m() {
            return Err(QpError::Dimension("updated vectors must keep the problem size"));
        }
        check_finite("q", q)?;
        check_bounds(lower, upper)?;
        self.problem.q.copy_from_slice(q);
        self.problem.lower.copy_from_slice(lower);
        self.problem.upper.copy_from_slice(upper);
        self.scale_vectors();
        let rho = rho_vector(lower, upper, self.rho_scalar);
        if rho != self.rho {
            self.rho = rho;
            self.refactor()?;
        }
        Ok(())
    }

    /// Replace the values of `P` (upper triangle) and `A` on the same pattern.
    /// The symbolic factorization is reused.
    pub fn update_matrices(&mut self, p: &CscMatrix, a: &CscMatrix) -> Result<(), QpError> {
        if !p.same_pattern(&self.problem.p) || !a.same_pattern(&self.problem.a) {
            return Err(QpError::PatternChanged);
        }
        check_finite("P", &p.values)?;
        check_finite("A", &a.values)?;
        check_psd(p)?;
        self.problem.p.values.copy_from_slice(&p.values);
        self.problem.a.values.copy_from_slice(&a.values);
        let (scaling, ps, as_) = Scaling::compute(&self.problem.p, &self.problem.a, self.settings.scaling_iter);
        self.scaling = scaling;
        self.ps = ps;
        self.as_ = as_;
        self.scale_vectors();
        self.rho_scalar = self.settings.rho;
        self.rho = rho_vector(&self.problem.lower, &self.problem.upper, self.rho_scalar);
        self.refactor()
    }

    /// Replace the whole problem; reuses the factorization when the pattern
    /// matches and rebuilds otherwise.
    pub fn update_problem(&mut self, problem: QpProblem) -> Result<(), QpError> {
        if problem.p.same_pattern(&self.problem.p) && problem.a.same_pattern(&self.problem.a) {
            problem.validate_structure()?;
            self.problem.q.clone_from(&problem.q);
            self.problem.lower.clone_from(&problem.lower);
            self.problem.upper.clone_from(&problem.upper);
            self.update_matrices(&problem.p, &problem.a)
        } else {
            check_psd(&problem.p)?;
            *self = Self::new(problem, self.settings)?;
            Ok(())
        }
    }

    fn warm_start(&mut self, warm: Option<(&[f64], &[f64])>) {
        let sc = &self.scaling;
        match warm {
            Some((x, y)) if x.len() == self.x.len() && y.len() == self.y.len() => {
                for j in 0..x.len() {
                    self.x[j] = x[j] / sc.d[j];
                }
                for i in 0..y.len() {
                    self.y[i] = sc.c * y[i] / sc.e[i];
                }
            }
            _ => {
                self.x.iter_mut().for_each(|v| *v = 0.0);
                self.y.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        self.z.iter_mut().for_each(|v| *v = 0.0);
        self.as_.mul_add(&self.x, &mut self.z);
        for i in 0..self.z.len() {
            self.z[i] = self.z[i].clamp(self.ls[i], self.us[i]);
        }
    }

    /// Unscaled residuals and their convergence thresholds.
    fn residuals(&self) -> Residuals {
        let sc = &self.scaling;
        let n = self.x.len();
        let m = self.z.len();
        let mut ax = vec![0.0; m];
        self.as_.mul_add(&self.x, &mut ax);
        let (mut prim, mut ax_n, mut z_n) = (0.0f64, 0.0f64, 0.0f64);
        for i in 0..m {
            let ei = 1.0 / sc.e[i];
            prim = prim.max(((ax[i] - self.z[i]) * ei).abs());
            ax_n = ax_n.max((ax[i] * ei).abs());
            z_n = z_n.max((self.z[i] * ei).abs());
        }
        let mut px = vec![0.0; n];
        self.ps.sym_upper_mul_add(&self.x, &mut px);
        let mut aty = vec![0.0; n];
        self.as_.mul_t_add(&self.y, &mut aty);
        let cinv = 1.0 / sc.c;
        let (mut dual, mut px_n, mut aty_n, mut q_n) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for j in 0..n {
            let dj = cinv / sc.d[j];
            dual = dual.max(((px[j] + self.qs[j] + aty[j]) * dj).abs());
            px_n = px_n.max((px[j] * dj).abs());
            aty_n = aty_n.max((aty[j] * dj).abs());
            q_n = q_n.max((self.qs[j] * dj).abs());
        }
        let st = &self.settings;
        Residuals {
            prim,
            dual,
            eps_prim: st.eps_abs + st.eps_rel * ax_n.max(z_n),
            eps_dual: st.eps_abs + st.eps_rel * px_n.max(aty_n).max(q_n),
            prim_scale: ax_n.max(z_n),
            dual_scale: px_n.max(aty_n).max(q_n),
        }
    }

    fn primal_infeasible(&self, dy: &mut [f64]) -> bool {
        let sc = &self.scaling;
        for i in 0..dy.len() {
            let (l, u) = (self.ls[i], self.us[i]);
            if u == f64::INFINITY && l == f64::NEG_INFINITY {
                dy[i] = 0.0;
            } else if u == f64::INFINITY {
                dy[i] = dy[i].min(0.0);
            } else if l == f64::NEG_INFINITY {
                dy[i] = dy[i].max(0.0);
            }
        }
        let norm = dy.iter().zip(&sc.e).fold(0.0f64, |m, (v, e)| m.max((v * e).abs()));
        if norm <= self.settings.eps_prim_inf {
            return false;
        }
        let mut lhs = 0.0;
        for i in 0..dy.len() {
            if dy[i] > 0.0 {
                lhs += self.us[i] * dy[i];
            } else if dy[i] < 0.0 {
                lhs += self.ls[i] * dy[i];
            }
        }
        if !(lhs < 0.0) {
            return false;
        }
        let mut aty = vec![0.0; self.x.len()];
        self.as_.mul_t_add(dy, &mut aty);
        let at_norm = aty.iter().zip(&sc.d).fold(0.0f64, |m, (v, d)| m.max((v / d).abs()));
        at_norm < self.settings.eps_prim_inf * norm
    }

    fn dual_infeasible(&self, dx: &[f64]) -> bool {
        let sc = &self.scaling;
        let norm = dx.iter().zip(&sc.d).fold(0.0f64, |m, (v, d)| m.max((v * d).abs()));
        let eps = self.settings.eps_dual_inf;
        if norm <= eps {
            return false;
        }
        let qdx: f64 = self.qs.iter().zip(dx).map(|(a, b)| a * b).sum();
        if !(qdx < 0.0) {
            return false;
        }
        let mut pdx = vec![0.0; dx.len()];
        self.ps.sym_upper_mul_add(dx, &mut pdx);
        let p_norm = pdx
            .iter()
            .zip(&sc.d)
            .fold(0.0f64, |m, (v, d)| m.max((v / d).abs()))
            / sc.c;
        if p_norm >= eps * norm {
            return false;
        }
        let mut adx = vec![0.0; self.z.len()];
        self.as_.mul_add(dx, &mut adx);
        (0..adx.len()).all(|i| {
            let v = adx[i] / sc.e[i];
            let (lo_inf, up_inf) = (self.ls[i] == f64::NEG_INFINITY, self.us[i] == f64::INFINITY);
            match (lo_inf, up_inf) {
                (true, true) => true,
                (false, true) => v >= -eps * norm,
                (true, false) => v <= eps * norm,
                (false, false) => v.abs() < eps * norm,
            }
        })
    }

    fn adapt_rho(&mut self, r: &Residuals) -> Result<(), QpError> {
        let p = r.prim / (r.prim_scale + 1e-30);
        let d = r.dual / (r.dual_scale + 1e-30);
        let new = (self.rho_scalar * (p / (d + 1e-30)).sqrt()).clamp(RHO_MIN, 1e6);
        if new > 5.0 * self.rho_scalar || new < 0.2 * self.rho_scalar {
            self.rho_scalar = new;
            self.rho = rho_vector(&self.problem.lower, &self.problem.upper, new);
            self.refactor()?;
        }
        Ok(())
    }

    /// Run ADMM from the given warm start (unscaled `(x, y)`).
    pub fn solve(&mut self, warm: Option<(&[f64], &[f64])>) -> QpSolution {
        self.warm_start(warm);
        let n = self.x.len();
        let m = self.z.len();
        let st = self.settings;
        let alpha = st.alpha_relax;
        let budget = if st.real_time { st.rt_iter } else { st.max_iter };
        let mut rhs = vec![0.0; n + m];
        let mut x_prev = vec![0.0; n];
        let mut y_prev = vec![0.0; m];
        let mut status = QpStatus::MaxIter;
        let mut iterations = 0;
        let mut res = self.residuals();
        for it in 1..=budget {
            x_prev.copy_from_slice(&self.x);
            y_prev.copy_from_slice(&self.y);
            for j in 0..n {
                rhs[j] = st.sigma * self.x[j] - self.qs[j];
            }
            for i in 0..m {
                rhs[n + i] = self.z[i] - self.y[i] / self.rho[i];
            }
            self.kkt.solve_in_place(&mut rhs);
            for j in 0..n {
                self.x[j] = alpha * rhs[j] + (1.0 - alpha) * x_prev[j];
            }
            for i in 0..m {
                let z_tilde = self.z[i] + (rhs[n + i] - self.y[i]) / self.rho[i];
                let z_relax = alpha * z_tilde + (1.0 - alpha) * self.z[i];
                let z_new = (z_relax + self.y[i] / self.rho[i]).clamp(self.ls[i], self.us[i]);
                self.y[i] += self.rho[i] * (z_relax - z_new);
                self.z[i] = z_new;
            }
            iterations = it;
            if st.real_time {
                continue;
            }
            res = self.residuals();
            if res.prim <= res.eps_prim && res.dual <= res.eps_dual {
                status = QpStatus::Solved;
                break;
            }
            if it % st.check_interval == 0 {
                let mut dy: Vec<f64> = self.y.iter().zip(&y_prev).map(|(a, b)| a - b).collect();
                if self.primal_infeasible(&mut dy) {
                    status = QpStatus::PrimalInfeasible;
                    break;
                }
                let dx: Vec<f64> = self.x.iter().zip(&x_prev).map(|(a, b)| a - b).collect();
                if self.dual_infeasible(&dx) {
                    status = QpStatus::DualInfeasible;
                    break;
                }
                if st.adaptive_rho && self.adapt_rho(&res).is_err() {
                    break;
                }
            }
        }
        if st.real_time {
            res = self.residuals();
            if res.prim <= res.eps_prim && res.dual <= res.eps_dual {
                status = QpStatus::Solved;
            }
        }
        let sc = &self.scaling;
        let x: Vec<f64> = self.x.iter().zip(&sc.d).map(|(v, d)| v * d).collect();
        let y: Vec<f64> = self.y.iter().zip(&sc.e).map(|(v, e)| v * e / sc.c).collect();
        let mut sol = QpSolution {
            x,
            y,
            status,
            iterations,
            primal_residual: res.prim,
            dual_residual: res.dual,
            polished: false,
        };
        if status == QpStatus::Solved && st.polish && !st.real_time {
            self.polish(&mut sol);
        }
        sol
    }

    fn polish(&self, sol: &mut QpSolution) {
        let prob = &self.problem;
        let (n, m) = (prob.n(), prob.m());
        let mut ax = vec![0.0; m];
        prob.a.mul_add(&sol.x, &mut ax);
        // Active set guessed from the multipliers and slacks.
        let mut active: Vec<(usize, f64, i8)> = Vec::new();
        for i in 0..m {
            let (l, u) = (prob.lower[i], prob.upper[i]);
            let z = ax[i].clamp(l, u);
            if l == u {
                active.push((i, l, 0));
            } else if l > -INF_BOUND && z - l < -sol.y[i] {
                active.push((i, l, -1));
            } else if u < INF_BOUND && u - z < sol.y[i] {
                active.push((i, u, 1));
            }
        }
        let k = active.len();
        let delta = 1e-6;
        let mut trip: Vec<(usize, usize, f64)> = prob.p.iter().collect();
        trip.extend((0..n).map(|j| (j, j, delta)));
        trip.extend((0..k).map(|r| (n + r, n + r, -delta)));
        // Rows of A restricted to the active set, placed in the upper block.
        let (at, _) = transpose_with_map(&prob.a);
        for (r, &(i, _, _)) in active.iter().enumerate() {
            for kk in at.col_ptr[i]..at.col_ptr[i + 1] {
                trip.push((at.row_idx[kk], n + r, at.values[kk]));
            }
        }
        let kkt = CscMatrix::from_triplets(n + k, n + k, &trip);
        let Ok(mut f) = Ldl::new(&kkt) else { return };
        let mut rhs = vec![0.0; n + k];
        for j in 0..n {
            rhs[j] = -prob.q[j];
        }
        for (r, &(_, b, _)) in active.iter().enumerate() {
            rhs[n + r] = b;
        }
        let mut sol_v = rhs.clone();
        f.solve_in_place(&mut sol_v);
        // Iterative refinement against the unregularized system.
        for _ in 0..5 {
            let mut kv = vec![0.0; n + k];
            kkt.sym_upper_mul_add(&sol_v, &mut kv);
            for j in 0..n {
                kv[j] -= delta * sol_v[j];
            }
            for r in 0..k {
                kv[n + r] += delta * sol_v[n + r];
            }
            let mut corr: Vec<f64> = rhs.iter().zip(&kv).map(|(a, b)| a - b).collect();
            f.solve_in_place(&mut corr);
            for (s, c) in sol_v.iter_mut().zip(&corr) {
                *s += c;
            }
        }
        let x = sol_v[..n].to_vec();
        let mut y = vec![0.0; m];
        for (r, &(i, _, side)) in active.iter().enumerate() {
            let v = sol_v[n + r];
            // A multiplier with the wrong sign means the active set was wrong.
            if (side > 0 && v < -self.settings.eps_abs) || (side < 0 && v > self.settings.eps_abs) {
                return;
            }
            y[i] = v;
        }
        if !x.iter().chain(&y).all(|v| v.is_finite()) {
            return;
        }
        let (prim, dual) = prob.kkt_residuals(&x, &y);
        if prim < sol.primal_residual.max(1e-10) && dual < sol.dual_residual.max(1e-10) {
            sol.x = x;
            sol.y = y;
            sol.primal_residual = prim;
            sol.dual_residual = dual;
            sol.polished = true;
        }
    }
}

struct Residuals {
    prim: f64,
    dual: f64,
    eps_prim: f64,
    eps_dual: f64,
    prim_scale: f64,
    dual_scale: f64,
}

/// One-shot solve.
pub fn solve(
    problem: &QpProblem,
    settings: &SolverSettings,
    warm_start: Option<(&[f64], &[f64])>,
) -> Result<QpSolution, QpError> {
    let mut s = QpSolver::new(problem.clone(), *settings)?;
    Ok(s.solve(warm_start))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unconstrained(p: &[f64], q: &[f64]) -> QpProblem {
        let n = q.len();
        QpProblem::new(
            CscMatrix::from_dense(n, n, p).upper_triangle(),
            q.to_vec(),
            CscMatrix::zeros(0, n),
            vec![],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn unconstrained_minimum_at_origin() {
        let prob = unconstrained(&[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0]);
        let s = solve(&prob, &SolverSettings::default(), None).unwrap();
        assert_eq!(s.status, QpStatus::Solved);
        assert!(s.x.iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn active_bound_multiplier() {
        let prob = QpProblem::new(
            CscMatrix::identity(1),
            vec![-3.0],
            CscMatrix::identity(1),
            vec![0.0],
            vec![1.0],
        )
        .unwrap();
        let s = solve(&prob, &SolverSettings::default(), None).unwrap();
        assert_eq!(s.status, QpStatus::Solved);
        assert!((s.x[0] - 1.0).abs() < 1e-6);
        assert!((s.y[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn indefinite_cost_rejected() {
        let p = CscMatrix::from_dense(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let err = QpProblem::new(p, vec![0.0; 2], CscMatrix::zeros(0, 2), vec![], vec![]);
        assert_eq!(err, Err(QpError::NotPsd));
    }

    #[test]
    fn linear_shift_moves_unconstrained_optimum() {
        // min ½xᵀPx + qᵀx has x* = -P⁻¹q; adding δ·P·x₀ shifts it by -δ·x₀.
        let pd = [4.0, 1.0, 1.0, 3.0];
        let x0 = [1.0, -2.0];
        let delta = 0.5;
        let base = unconstrained(&pd, &[1.0, 1.0]);
        let settings = SolverSettings {
            eps_abs: 1e-10,
            eps_rel: 1e-10,
            ..Default::default()
        };
        let mut solver = QpSolver::new(base.clone(), settings).unwrap();
        let s0 = solver.solve(None);
        let mut px = vec![0.0; 2];
        base.p.sym_upper_mul_add(&x0, &mut px);
        let q1: Vec<f64> = base.q.iter().zip(&px).map(|(q, p)| q + delta * p).collect();
        solver.update_vectors(&q1, &[], &[]).unwrap();
        let s1 = solver.solve(None);
        for j in 0..2 {
            assert!((s1.x[j] - (s0.x[j] - delta * x0[j])).abs() < 1e-8);
        }
    }

    #[test]
    fn primal_infeasibility_detected() {
        // x ≥ 1 and x ≤ 0.
        let a = CscMatrix::from_dense(2, 1, &[1.0, 1.0]);
        let prob = QpProblem::new(CscMatrix::identity(1), vec![0.0], a, vec![1.0, -1e30], vec![1e30, 0.0]).unwrap();
        let s = solve(&prob, &SolverSettings::default(), None).unwrap();
        assert_eq!(s.status, QpStatus::PrimalInfeasible);
    }

    #[test]
    fn dual_infeasibility_detected() {
        // min -x with x ≥ 0 only.
        let prob = QpProblem::new(
            CscMatrix::zeros(1, 1),
            vec![-1.0],
            CscMatrix::identity(1),
            vec![0.0],
            vec![1e30],
        )
        .unwrap();
        let s = solve(&prob, &SolverSettings::default(), None).unwrap();
        assert_eq!(s.status, QpStatus::DualInfeasible);
    }

    #[test]
    fn real_time_mode_runs_fixed_budget() {
        let prob = QpProblem::new(
            CscMatrix::identity(2),
            vec![-3.0, 1.0],
            CscMatrix::identity(2),
            vec![0.0, 0.0],
            vec![1.0, 1.0],
        )
        .unwrap();
        let settings = SolverSettings {
            real_time: true,
            rt_iter: 7,
            ..Default::default()
        };
        let s = solve(&prob, &settings, None).unwrap();
        assert_eq!(s.iterations, 7);
        assert!(!s.polished);
    }

    #[test]
    fn bad_settings_rejected() {
        let prob = unconstrained(&[1.0], &[0.0]);
        let settings = SolverSettings {
            alpha_relax: 2.0,
            ..Default::default()
        };
        assert!(matches!(solve(&prob, &settings, None), Err(QpError::Settings(_))));
    }
}
