//! Random feasible strictly convex QPs.

#![allow(dead_code)]

use hopmpc_core::qp::{CscMatrix, QpProblem};
use rand::Rng;

pub fn random_qp<R: Rng>(rng: &mut R, max_n: usize, max_m: usize) -> QpProblem {
    let n = rng.gen_range(2..=max_n);
    let m = rng.gen_range(0..=max_m);
    let mut mdense = vec![0.0; n * n];
    for v in mdense.iter_mut() {
        if rng.gen_bool(0.4) {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
    let mut trip = Vec::new();
    for i in 0..n {
        for j in i..n {
            let mut s: f64 = (0..n).map(|k| mdense[k * n + i] * mdense[k * n + j]).sum();
            if i == j {
                s += 0.1;
            }
            if s != 0.0 {
                trip.push((i, j, s));
            }
        }
    }
    let p = CscMatrix::from_triplets(n, n, &trip);
    let q: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
    let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut at = Vec::new();
    for i in 0..m {
        let mut any = false;
        for j in 0..n {
            if rng.gen_bool(0.3) {
                at.push((i, j, rng.gen_range(-1.0..1.0)));
                any = true;
            }
        }
        if !any {
            at.push((i, rng.gen_range(0..n), 1.0));
        }
    }
    let a = CscMatrix::from_triplets(m, n, &at);
    let mut ax = vec![0.0; m];
    a.mul_add(&x0, &mut ax);
    let mut lower = vec![0.0; m];
    let mut upper = vec![0.0; m];
    let mut n_eq = 0;
    for i in 0..m {
        let kind = rng.gen_range(0..10);
        match kind {
            0 | 1 if n_eq < n / 2 => {
                lower[i] = ax[i];
                upper[i] = ax[i];
                n_eq += 1;
            }
            2 | 3 => {
                lower[i] = ax[i] - rng.gen_range(0.0..1.0);
                upper[i] = 1e30;
            }
            4 | 5 => {
                lower[i] = -1e30;
                upper[i] = ax[i] + rng.gen_range(0.0..1.0);
            }
            _ => {
                lower[i] = ax[i] - rng.gen_range(0.0..1.0);
                upper[i] = ax[i] + rng.gen_range(0.0..1.0);
            }
        }
    }
    QpProblem::new(p, q, a, lower, upper).unwrap()
}
