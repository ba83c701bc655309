#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use nsqp::qp::QpData;
use rand::Rng;

/// Random strictly convex elastic QP with n ≤ 8 and m ≤ 6.
pub fn random_elastic_qp<R: Rng>(rng: &mut R) -> QpData {
    let n = rng.gen_range(1..=8);
    let m = rng.gen_range(0..=6);
    let me = rng.gen_range(0..=m);
    let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let b = a.transpose() * &a + DMatrix::identity(n, n) * rng.gen_range(0.1..2.0);
    let b = (&b + b.transpose()) * 0.5;
    let g = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
    let c = DVector::from_fn(m, |_, _| rng.gen_range(-2.0..2.0));
    let jac = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.5..1.5));
    let theta = rng.gen_range(0.2..5.0);
    QpData::new(b, g, c, jac, theta, me).unwrap()
}

/// Solves `min gᵀd + ½dᵀBd s.t. c + Jd = 0` through its KKT system; the
/// returned λ satisfies `g + Bd − Jᵀλ = 0`.
pub fn solve_equality_kkt(
    b: &DMatrix<f64>,
    g: &DVector<f64>,
    c: &DVector<f64>,
    jac: &DMatrix<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let n = g.len();
    let m = c.len();
    let mut k = DMatrix::zeros(n + m, n + m);
    k.view_mut((0, 0), (n, n)).copy_from(b);
    k.view_mut((0, n), (n, m)).copy_from(&(-jac.transpose()));
    k.view_mut((n, 0), (m, n)).copy_from(jac);
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(&(-g));
    rhs.rows_mut(n, m).copy_from(&(-c));
    let sol = k.full_piv_lu().solve(&rhs).expect("nonsingular KKT system");
    (sol.rows(0, n).into_owned(), sol.rows(n, m).into_owned())
}
