mod support;

use hopmpc_core::qp::{solve, QpSolver, QpStatus, SolverSettings};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use support::active_set::solve_problem;
use support::random_qp::random_qp;

#[test]
fn random_qps_match_active_set_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let settings = SolverSettings {
        adaptive_rho: true,
        ..Default::default()
    };
    let mut worst = 0.0f64;
    for k in 0..100 {
        let prob = random_qp(&mut rng, 30, 60);
        let reference = solve_problem(&prob).expect("reference solve");
        let sol = solve(&prob, &settings, None).unwrap();
        assert_eq!(sol.status, QpStatus::Solved, "instance {k}");
        let dx = sol.x.iter().zip(reference.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(dx);
        assert!(dx < 1e-4, "instance {k}: |dx| = {dx:e}");
        let (prim, dual) = prob.kkt_residuals(&sol.x, &sol.y);
        assert!(prim < 1e-4 && dual < 1e-4, "instance {k}: residuals {prim:e} {dual:e}");
    }
    eprintln!("worst deviation {worst:e}");
}

#[test]
fn update_equals_cold_build() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = random_qp(&mut rng, 20, 30);
    let mut b = a.clone();
    for v in &mut b.q {
        *v *= -0.7;
    }
    for (l, u) in b.lower.iter_mut().zip(b.upper.iter_mut()) {
        if *l > -1e20 {
            *l -= 0.1;
        }
        if *u < 1e20 {
            *u += 0.05;
        }
    }
    let settings = SolverSettings::default();
    let mut warm = QpSolver::new(a, settings).unwrap();
    warm.solve(None);
    warm.update_vectors(&b.q, &b.lower, &b.upper).unwrap();
    let updated = warm.solve(None);
    let cold = solve(&b, &settings, None).unwrap();
    for (x, y) in updated.x.iter().zip(&cold.x) {
        assert!((x - y).abs() < 1e-10);
    }
    assert_eq!(updated, cold);
}

#[test]
fn matrix_update_reuses_pattern() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random_qp(&mut rng, 15, 20);
    let mut b = a.clone();
    for v in &mut b.a.values {
        *v *= 1.1;
    }
    for v in &mut b.p.values {
        *v *= 2.0;
    }
    let settings = SolverSettings::default();
    let mut solver = QpSolver::new(a, settings).unwrap();
    solver.update_matrices(&b.p, &b.a).unwrap();
    let updated = solver.solve(None);
    let cold = solve(&b, &settings, None).unwrap();
    assert_eq!(updated, cold);
}

#[test]
fn warm_start_at_optimum_finishes_quickly() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // Polishing returns the exact optimum of the detected active set.
    let settings = SolverSettings {
        adaptive_rho: true,
        ..Default::default()
    };
    for _ in 0..20 {
        let prob = random_qp(&mut rng, 25, 40);
        let mut solver = QpSolver::new(prob, settings).unwrap();
        let first = solver.solve(None);
        assert_eq!(first.status, QpStatus::Solved);
        let again = solver.solve(Some((&first.x, &first.y)));
        assert_eq!(again.status, QpStatus::Solved);
        assert!(again.iterations <= 2, "took {}", again.iterations);
    }
}

#[test]
fn solves_are_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let prob = random_qp(&mut rng, 30, 60);
    let settings = SolverSettings::default();
    let a = solve(&prob, &settings, None).unwrap();
    let b = solve(&prob, &settings, None).unwrap();
    assert_eq!(a, b);
    for (x, y) in a.x.iter().zip(&b.x) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn solved_results_meet_tolerance_and_repeat_bitwise(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prob = random_qp(&mut rng, 20, 40);
        let settings = SolverSettings::default();
        let a = solve(&prob, &settings, None).unwrap();
        let b = solve(&prob, &settings, None).unwrap();
        prop_assert!(a.x.iter().chain(&a.y).zip(b.x.iter().chain(&b.y)).all(|(u, v)| u.to_bits() == v.to_bits()));
        if a.status == QpStatus::Solved {
            let norm = |v: &[f64]| v.iter().fold(0.0f64, |m, e| m.max(e.abs()));
            let (mut ax, mut px, mut aty) = (vec![0.0; prob.m()], vec![0.0; prob.n()], vec![0.0; prob.n()]);
            prob.a.mul_add(&a.x, &mut ax);
            prob.p.sym_upper_mul_add(&a.x, &mut px);
            prob.a.mul_t_add(&a.y, &mut aty);
            let (prim, dual) = prob.kkt_residuals(&a.x, &a.y);
            let eps_prim = settings.eps_abs + settings.eps_rel * norm(&ax);
            let eps_dual = settings.eps_abs + settings.eps_rel * norm(&px).max(norm(&aty)).max(norm(&prob.q));
            prop_assert!(prim <= eps_prim, "primal {:e} > {:e}", prim, eps_prim);
            prop_assert!(dual <= eps_dual, "dual {:e} > {:e}", dual, eps_dual);
        }
    }
}
