//! Mangasarian–Fromovitz constraint qualification check.

use nalgebra::{DMatrix, DVector};

use super::AnalysisError;
use crate::problem::ProblemSpec;
use crate::qp::{solve_qp, QpData, QpSolverSettings};

const RANK_TOLERANCE: f64 = 1e-8;
const AUX_PENALTY: f64 = 1e6;
const AUX_SLACK_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct MfcqReport {
    pub holds: bool,
    /// `w` with `∇c_Eᵀw = 0` and `∇c_iᵀw ≥ 1` on the active inequalities.
    pub witness: Option<DVector<f64>>,
    pub equality_rank: usize,
    /// Active inequality rows (global indices).
    pub active: Vec<usize>,
}

fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let largest = sv.max();
    sv.iter().filter(|&&s| s > RANK_TOLERANCE * largest).count()
}

/// Rank test on the equality gradients, then the auxiliary problem
/// `min ½‖w‖²` s.t. `∇c_Eᵀw = 0`, `∇c_iᵀw ≥ 1` on active inequalities.
pub fn check_mfcq(spec: &ProblemSpec, x: &DVector<f64>, active_tol: f64) -> Result<MfcqReport, AnalysisError> {
    let n = spec.n();
    let me = spec.eq_count();
    let (c, jac) = spec.constraints(x)?;
    let je = jac.rows(0, me).into_owned();
    let equality_rank = numerical_rank(&je);
    let active: Vec<usize> = (me..spec.m()).filter(|&i| c[i].abs() <= active_tol).collect();
    if equality_rank < me {
        return Ok(MfcqReport {
            holds: false,
            witness: None,
            equality_rank,
            active,
        });
    }
    if active.is_empty() {
        let witness = if me == 0 {
            let mut w = DVector::zeros(n);
            w[0] = 1.0;
            w
        } else if me < n {
            let eig = (je.transpose() * &je).symmetric_eigen();
            eig.eigenvectors.column(eig.eigenvalues.imin()).into_owned()
        } else {
            DVector::zeros(n)
        };
        return Ok(MfcqReport {
            holds: true,
            witness: Some(witness),
            equality_rank,
            active,
        });
    }
    let rows = me + active.len();
    let mut a = DMatrix::zeros(rows, n);
    a.rows_mut(0, me).copy_from(&je);
    for (r, &i) in active.iter().enumerate() {
        a.row_mut(me + r).copy_from(&jac.row(i));
    }
    let mut rhs = DVector::zeros(rows);
    rhs.rows_mut(me, active.len()).fill(-1.0);
    let qp = QpData::new(DMatrix::identity(n, n), DVector::zeros(n), rhs, a, AUX_PENALTY, me)?;
    let sol = solve_qp(&qp, &QpSolverSettings::default())?;
    let holds = sol.max_slack() <= AUX_SLACK_TOLERANCE;
    Ok(MfcqReport {
        holds,
        witness: holds.then_some(sol.d),
        equality_rank,
        active,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::Bounds;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn single_equality_has_orthogonal_witness() {
        let spec = ProblemSpec::new(Bounds::uniform(2, -2.0, 2.0), |x| (0.0, DVector::zeros(x.len())))
            .with_constraints(1, 0, |x| (dv(&[x[0] + x[1] - 1.0]), DMatrix::from_row_slice(1, 2, &[1.0, 1.0])));
        let r = check_mfcq(&spec, &dv(&[0.5, 0.5]), 1e-8).unwrap();
        assert!(r.holds);
        let w = r.witness.unwrap();
        assert!((w[0] + w[1]).abs() <= 1e-12);
        assert!((w.norm() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn parallel_equalities_fail_rank_test() {
        let spec = ProblemSpec::new(Bounds::uniform(2, -2.0, 2.0), |x| (0.0, DVector::zeros(x.len())))
            .with_constraints(2, 0, |x| {
                (
                    dv(&[x[0] + x[1] - 1.0, x[0] + x[1] - 1.0]),
                    DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]),
                )
            });
        let r = check_mfcq(&spec, &dv(&[0.5, 0.5]), 1e-8).unwrap();
        assert!(!r.holds);
        assert_eq!(r.equality_rank, 1);
    }

    #[test]
    fn opposing_active_inequalities_fail() {
        // x ≥ 0 and −x ≥ 0 at 0: no w has both w > 0 and −w > 0.
        let spec = ProblemSpec::new(Bounds::uniform(1, -1.0, 1.0), |_| (0.0, dv(&[0.0])))
            .with_constraints(0, 2, |x| (dv(&[x[0], -x[0]]), DMatrix::from_column_slice(2, 1, &[1.0, -1.0])));
        let r = check_mfcq(&spec, &dv(&[0.0]), 1e-8).unwrap();
        assert!(!r.holds);
        assert_eq!(r.active, vec![0, 1]);
    }

    #[test]
    fn active_inequality_gets_strict_witness() {
        let spec = ProblemSpec::new(Bounds::uniform(2, -1.0, 1.0), |x| (0.0, DVector::zeros(x.len())))
            .with_constraints(1, 1, |x| {
                (dv(&[x[0] - x[1], x[0]]), DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 1.0, 0.0]))
            });
        let r = check_mfcq(&spec, &dv(&[0.0, 0.0]), 1e-8).unwrap();
        assert!(r.holds);
        let w = r.witness.unwrap();
        assert!((w[0] - w[1]).abs() <= 1e-9 && w[0] >= 1.0 - 1e-9);
    }
}
