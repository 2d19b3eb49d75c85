//! Dense dual active-set QP solver (Goldfarb-Idnani) used as a reference.
//!
//! Solves `min ½xᵀGx + cᵀx` s.t. `eq_i · x = b_i`, `ineq_j · x ≥ d_j` for
//! positive definite `G`. Every step recomputes the projections from scratch,
//! which is slow but leaves little room for bookkeeping mistakes.

#![allow(dead_code)]

use hopmpc_core::qp::{QpProblem, INF_BOUND};
use nalgebra::{DMatrix, DVector};

pub struct Constraint {
    pub normal: DVector<f64>,
    pub rhs: f64,
    pub equality: bool,
}

struct Projection {
    h: DMatrix<f64>,
    nstar: DMatrix<f64>,
}

fn projection(ginv: &DMatrix<f64>, normals: &[DVector<f64>]) -> Option<Projection> {
    let n = ginv.nrows();
    if normals.is_empty() {
        return Some(Projection {
            h: ginv.clone(),
            nstar: DMatrix::zeros(0, n),
        });
    }
    let nm = DMatrix::from_columns(normals);
    let gn = ginv * &nm;
    let m = nm.transpose() * &gn;
    let minv = m.try_inverse()?;
    let nstar = &minv * gn.transpose();
    let h = ginv - &gn * &nstar;
    Some(Projection { h, nstar })
}

/// Returns the minimizer, or `None` when the constraints are infeasible.
pub fn solve_dense(g: &DMatrix<f64>, c: &DVector<f64>, cons: &[Constraint]) -> Option<DVector<f64>> {
    let ginv = g.clone().cholesky()?.inverse();
    let mut x = -(&ginv * c);
    // Active constraints: (index, sign applied to the normal, multiplier).
    let mut active: Vec<(usize, f64)> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let tol = 1e-12;
    let normal = |i: usize, sign: f64| &cons[i].normal * sign;
    let slack = |x: &DVector<f64>, i: usize, sign: f64| sign * (cons[i].normal.dot(x) - cons[i].rhs);

    let mut pending_eq: Vec<usize> = (0..cons.len()).filter(|&i| cons[i].equality).collect();
    let mut guard = 0;
    loop {
        guard += 1;
        if guard > 10_000 {
            return None;
        }
        // Pick the next constraint to add.
        let (p, sign) = if let Some(i) = pending_eq.pop() {
            let s = cons[i].normal.dot(&x) - cons[i].rhs;
            (i, if s > 0.0 { -1.0 } else { 1.0 })
        } else {
            let mut best: Option<(usize, f64)> = None;
            for i in 0..cons.len() {
                if cons[i].equality || active.iter().any(|a| a.0 == i) {
                    continue;
                }
                let s = slack(&x, i, 1.0);
                let scale = 1.0 + cons[i].normal.norm() * x.norm() + cons[i].rhs.abs();
                if s < -tol * scale && best.is_none_or(|b| s < b.1) {
                    best = Some((i, s));
                }
            }
            match best {
                Some((i, _)) => (i, 1.0),
                None => return Some(x),
            }
        };
        let np = normal(p, sign);
        let mut up = 0.0;
        loop {
            let normals: Vec<DVector<f64>> = active.iter().map(|&(i, s)| normal(i, s)).collect();
            let proj = projection(&ginv, &normals)?;
            let z = &proj.h * &np;
            let r = &proj.nstar * &np;
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for (k, &(i, _)) in active.iter().enumerate() {
                if !cons[i].equality && r[k] > 0.0 {
                    let t = u[k] / r[k];
                    if t < t1 {
                        t1 = t;
                        drop = Some(k);
                    }
                }
            }
            let znp = z.dot(&np);
            let s = slack(&x, p, sign);
            let t2 = if z.norm() > 1e-12 && znp.abs() > 1e-14 {
                -s / znp
            } else {
                f64::INFINITY
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                if cons[p].equality && s.abs() < 1e-12 {
                    // Redundant equality already satisfied.
                    break;
                }
                return None;
            }
            if t2.is_infinite() {
                for k in 0..u.len() {
                    u[k] -= t * r[k];
                }
                up += t;
                let k = drop.unwrap();
                active.remove(k);
                u.remove(k);
                continue;
            }
            x += &z * t;
            for k in 0..u.len() {
                u[k] -= t * r[k];
            }
            up += t;
            if t2 <= t1 {
                active.push((p, sign));
                u.push(up);
                break;
            }
            let k = drop.unwrap();
            active.remove(k);
            u.remove(k);
        }
    }
}

/// Convert the sparse two-sided form into the reference form.
pub fn solve_problem(prob: &QpProblem) -> Option<DVector<f64>> {
    let n = prob.n();
    let p = prob.p.to_dense();
    let mut g = DMatrix::from_row_slice(n, n, &p);
    let upper = g.clone();
    for i in 0..n {
        for j in 0..i {
            g[(i, j)] = upper[(j, i)];
        }
    }
    let a = DMatrix::from_row_slice(prob.m(), n, &prob.a.to_dense());
    let mut cons = Vec::new();
    for i in 0..prob.m() {
        let row: DVector<f64> = a.row(i).transpose();
        let (l, u) = (prob.lower[i], prob.upper[i]);
        if l == u {
            cons.push(Constraint { normal: row, rhs: l, equality: true });
            continue;
        }
        if l > -INF_BOUND {
            cons.push(Constraint { normal: row.clone(), rhs: l, equality: false });
        }
        if u < INF_BOUND {
            cons.push(Constraint { normal: -row, rhs: -u, equality: false });
        }
    }
    solve_dense(&g, &DVector::from_column_slice(&prob.q), &cons)
}
