mod common;

use bcs_tc::critical_temp::{tc_solve, TcOptions};
use bcs_tc::gap_equation::*;

#[test]
fn below_and_above_the_critical_temperature() {
    let v = common::square_well();
    let d = common::disc(&v);
    let mu = 0.1;
    let tc = tc_solve(&v, mu, &d, &TcOptions::default()).unwrap().tc;
    let opts = GapOptions::default();

    let hot = gap_iterate(&v, 1.25 * tc, mu, &d, |_| 0.1 * mu, &opts).unwrap();
    assert_eq!(hot.classification, Classification::Trivial);
    assert_eq!(hot.max_delta(), 0.0);

    let cold = gap_iterate(&v, 0.8 * tc, mu, &d, |_| 0.1 * mu, &opts).unwrap();
    assert_eq!(cold.classification, Classification::Nontrivial);
    assert!(cold.residual <= 1e-8 * cold.max_delta());
    for ((e, dl), eps) in cold.dispersion.iter().zip(&cold.delta).zip(cold.p.iter().map(|p| p * p - mu)) {
        assert!(*e >= dl.abs() && *e >= eps.abs() * (1.0 - 1e-15));
    }

    let fine = gap_iterate(&v, 0.8 * tc, mu, &d.refined(), |_| 0.1 * mu, &opts).unwrap();
    let (a, b) = (cold.max_delta(), fine.max_delta());
    assert!((a - b).abs() < 1e-3 * a, "{a} vs {b}");
}

#[test]
fn converged_gap_is_linearly_stable() {
    let v = common::square_well();
    let d = common::disc(&v);
    let mu = 0.1;
    let tc = tc_solve(&v, mu, &d, &TcOptions::default()).unwrap().tc;
    let pg = d.momentum_grid(mu, 0.7 * tc).unwrap();
    let problem = GapProblem::new(&v, d.radial.r_max(), &pg).unwrap();
    let s = problem.iterate(vec![0.01; problem.len()], &GapOptions::default()).unwrap();
    assert_eq!(s.classification, Classification::Nontrivial);
    // Δ = 0 is unstable below T_c, the converged branch is not.
    assert!(problem.linearization_max_eigenvalue(&vec![0.0; problem.len()]) > 1.0);
    assert!(problem.linearization_max_eigenvalue(&s.delta) <= 1.0 + 1e-6);
    // The RHS vanishes identically at Δ = 0.
    assert!(problem.rhs(&vec![0.0; problem.len()]).iter().all(|&x| x == 0.0));
}

#[test]
fn order_parameter_decreases_along_the_scan() {
    let v = common::square_well();
    let d = common::disc(&v);
    let mu = 0.1;
    let tc = tc_solve(&v, mu, &d, &TcOptions::default()).unwrap().tc;
    let temps: Vec<f64> = [0.3, 0.5, 0.7, 0.9].iter().map(|f| f * tc).collect();
    let rows = transition_scan(&v, mu, &temps, &d, 0.1 * mu, &GapOptions::default());
    assert!(rows.iter().all(|r| r.error.is_none()));
    assert!(rows.windows(2).all(|w| w[0].max_delta >= w[1].max_delta), "{rows:?}");
}
