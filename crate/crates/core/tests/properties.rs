//! Property tests of the building blocks.

mod common;

use nalgebra::{DMatrix, DVector};
use nsqp::analysis::{conjugate_value, fenchel_young_residual, fit_linear_rate, PotentialParams, GRID_ERROR};
use nsqp::globalization::update_penalty;
use nsqp::library::build;
use nsqp::problem::{Bounds, ProblemSpec};
use nsqp::qp::{classification_tolerance, classify, recover_slack_multipliers, solve_qp, QpData, QpSolverSettings};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn spec_with_rows(eq: usize, ineq: usize) -> ProblemSpec {
    ProblemSpec::new(Bounds::uniform(1, -1.0, 1.0), |_| (0.0, DVector::zeros(1))).with_constraints(
        eq,
        ineq,
        move |_| (DVector::zeros(eq + ineq), DMatrix::zeros(eq + ineq, 1)),
    )
}

fn row_values() -> impl Strategy<Value = (usize, Vec<f64>)> {
    (0usize..5, 0usize..5).prop_flat_map(|(eq, ineq)| {
        let value = prop_oneof![Just(0.0), -3.0..3.0_f64];
        (Just(eq), proptest::collection::vec(value, eq + ineq))
    })
}

proptest! {
    #[test]
    fn violation_vanishes_exactly_on_feasible_values((eq, values) in row_values()) {
        let spec = spec_with_rows(eq, values.len() - eq);
        let c = DVector::from_vec(values.clone());
        let v = spec.constraint_violation(&c);
        let feasible = values[..eq].iter().all(|&x| x == 0.0) && values[eq..].iter().all(|&x| x >= 0.0);
        prop_assert!(v >= 0.0);
        prop_assert_eq!(v == 0.0, feasible);
        let oracle: f64 = values[..eq].iter().map(|x| x.abs()).sum::<f64>()
            + values[eq..].iter().map(|x| (-x).max(0.0)).sum::<f64>();
        prop_assert!((v - oracle).abs() <= 1e-12);
    }

    #[test]
    fn slack_multipliers_reconstruct_lambda(
        lambda in proptest::collection::vec(-5.0..5.0_f64, 0..8),
        eq_frac in 0.0..1.0_f64,
        theta in 0.1..10.0_f64,
    ) {
        let eq = (eq_frac * lambda.len() as f64) as usize;
        let l = DVector::from_vec(lambda.clone());
        let (p, q, r) = recover_slack_multipliers(&l, theta, eq);
        for i in 0..eq {
            prop_assert!(((p[i] - q[i]) / 2.0 - lambda[i]).abs() <= 1e-12);
            prop_assert!((p[i] + q[i] - 2.0 * theta).abs() <= 1e-12);
        }
        for (j, i) in (eq..lambda.len()).enumerate() {
            prop_assert!((theta - r[j] - lambda[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn penalty_never_decreases_and_dominates_multipliers(
        theta in 0.0..10.0_f64,
        lambda in proptest::collection::vec(-20.0..20.0_f64, 1..8),
        gamma in 1e-4..1.0_f64,
    ) {
        let l = DVector::from_vec(lambda);
        let next = update_penalty(theta, &l, gamma);
        prop_assert!(next >= theta);
        prop_assert!(next >= l.amax() + gamma);
        prop_assert_eq!(update_penalty(next, &l, gamma), next);
    }

    #[test]
    fn rate_fit_recovers_exact_geometric_errors(
        q0 in 0.05..0.95_f64,
        q1 in 0.01..100.0_f64,
        len in 3usize..40,
    ) {
        let errors: Vec<f64> = (0..len).map(|k| q1 * q0.powi(k as i32)).collect();
        let fit = fit_linear_rate(&errors).unwrap();
        prop_assert!((fit.q0 - q0).abs() <= 1e-10 * q0.max(1.0));
        prop_assert!((fit.q1 / q1 - 1.0).abs() <= 1e-9);
        prop_assert!(fit.r_squared >= 1.0 - 1e-10);
    }

    #[test]
    fn classification_follows_inequality_permutations(seed in 0u64..10_000, rot in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let qp = common::random_elastic_qp(&mut rng);
        let ineq = qp.m() - qp.eq_count;
        prop_assume!(ineq >= 2);
        let perm: Vec<usize> = (0..ineq).map(|j| (j + rot) % ineq).collect();
        let mut c = qp.c.clone();
        let mut jac = qp.jac.clone();
        for (j, &src) in perm.iter().enumerate() {
            c[qp.eq_count + j] = qp.c[qp.eq_count + src];
            jac.row_mut(qp.eq_count + j).copy_from(&qp.jac.row(qp.eq_count + src));
        }
        let permuted = QpData::new(qp.b.clone(), qp.g.clone(), c, jac, qp.theta, qp.eq_count).unwrap();
        let settings = QpSolverSettings::default();
        let a = solve_qp(&qp, &settings).unwrap();
        let b = solve_qp(&permuted, &settings).unwrap();
        let tol = classification_tolerance(qp.theta);
        let ca = classify(&qp, &a, tol);
        let cb = classify(&permuted, &b, tol);
        let mapped: Vec<usize> = cb
            .inconsistent
            .iter()
            .map(|&i| if i < qp.eq_count { i } else { qp.eq_count + perm[i - qp.eq_count] })
            .collect();
        let mut mapped = mapped;
        mapped.sort_unstable();
        prop_assert_eq!(mapped, ca.inconsistent);
        prop_assert!((&a.d - &b.d).amax() <= 1e-8);
    }
}

fn dc1d_params() -> (ProblemSpec, PotentialParams) {
    let spec = build("dc1d").unwrap().spec;
    let params = PotentialParams::new(3.0, 2.0, spec.bounds().clone());
    (spec, params)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn grid_conjugate_is_midpoint_convex(y1 in -8.0..8.0_f64, y2 in -8.0..8.0_f64) {
        let (spec, params) = dc1d_params();
        let at = |y: f64| conjugate_value(&spec, &params, &DVector::from_element(1, y)).unwrap();
        prop_assert!(at(0.5 * (y1 + y2)) <= 0.5 * (at(y1) + at(y2)) + GRID_ERROR);
    }

    #[test]
    fn fenchel_young_is_nonnegative(x in -2.0..2.0_f64, y in -8.0..8.0_f64) {
        let (spec, params) = dc1d_params();
        let r = fenchel_young_residual(&spec, &params, &DVector::from_element(1, x), &DVector::from_element(1, y)).unwrap();
        prop_assert!(r >= -GRID_ERROR);
    }

    #[test]
    fn fenchel_young_is_tight_on_subgradients(x in -1.9..1.9_f64) {
        // F = −f + 3/2 x², with f = min(x² − x, x² + x); away from the kink ∂F = {x ± 1}
        prop_assume!(x.abs() > 1e-3);
        let (spec, params) = dc1d_params();
        let y = x + x.signum();
        let r = fenchel_young_residual(&spec, &params, &DVector::from_element(1, x), &DVector::from_element(1, y)).unwrap();
        prop_assert!(r.abs() <= GRID_ERROR, "{r:e}");
    }
}
