//! The elastic (ℓ1-relaxed) quadratic subproblem solved at each iterate:
//!
//! ```text
//! min  gᵀd + ½dᵀBd + θ Σ_E (v_i + w_i) + θ Σ_I t_i
//! s.t. c_i + ∇c_iᵀd = v_i − w_i     i ∈ E
//!      c_i + ∇c_iᵀd ≥ −t_i          i ∈ I
//!      v, w, t ≥ 0
//! ```
//!
//! Slacks make the subproblem feasible for any data, so it always has a
//! solution when `B` is positive definite.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

use crate::problem::{ProblemError, ProblemSpec};

/// Symmetry tolerance for `B`.
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssemblyError {
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("B is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("B is not positive definite (smallest eigenvalue {0:e})")]
    NotPositiveDefinite(f64),
    #[error("penalty parameter must be positive, got {0}")]
    NonPositivePenalty(f64),
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

/// Data of one elastic subproblem.
#[derive(Debug, Clone, PartialEq)]
pub struct QpData {
    pub b: DMatrix<f64>,
    /// Smallest eigenvalue of `b`, the `b` of `dᵀBd ≥ b‖d‖²`.
    pub b_lower: f64,
    pub g: DVector<f64>,
    pub c: DVector<f64>,
    pub jac: DMatrix<f64>,
    pub theta: f64,
    pub eq_count: usize,
    pub ineq_count: usize,
}

impl QpData {
    pub fn new(
        b: DMatrix<f64>,
        g: DVector<f64>,
        c: DVector<f64>,
        jac: DMatrix<f64>,
        theta: f64,
        eq_count: usize,
    ) -> Result<Self, AssemblyError> {
        let n = g.len();
        let m = c.len();
        if b.nrows() != n || b.ncols() != n {
            return Err(AssemblyError::Dimension {
                what: "B",
                expected: n,
                got: b.nrows(),
            });
        }
        if jac.nrows() != m || (m > 0 && jac.ncols() != n) {
            return Err(AssemblyError::Dimension {
                what: "Jacobian",
                expected: m,
                got: jac.nrows(),
            });
        }
        if eq_count > m {
            return Err(AssemblyError::Dimension {
                what: "equality count",
                expected: m,
                got: eq_count,
            });
        }
        for (what, finite) in [
            ("B", b.iter().all(|v| v.is_finite())),
            ("g", g.iter().all(|v| v.is_finite())),
            ("c", c.iter().all(|v| v.is_finite())),
            ("Jacobian", jac.iter().all(|v| v.is_finite())),
            ("theta", theta.is_finite()),
        ] {
            if !finite {
                return Err(AssemblyError::NonFinite(what));
            }
        }
        if theta <= 0.0 {
            return Err(AssemblyError::NonPositivePenalty(theta));
        }
        let asym = (&b - b.transpose()).amax();
        if asym > SYMMETRY_TOLERANCE * b.amax().max(1.0) {
            return Err(AssemblyError::NotSymmetric(asym));
        }
        let b_lower = if n == 0 {
            f64::INFINITY
        } else {
            SymmetricEigen::new(b.clone()).eigenvalues.min()
        };
        if b_lower <= 0.0 {
            return Err(AssemblyError::NotPositiveDefinite(b_lower));
        }
        let jac = if m == 0 { DMatrix::zeros(0, n) } else { jac };
        Ok(Self {
            b,
            b_lower,
            g,
            c,
            jac,
            theta,
            eq_count,
            ineq_count: m - eq_count,
        })
    }

    /// Subproblem at `x` with subgradient `g`, model matrix `b` and penalty `theta`.
    pub fn assemble(
        spec: &ProblemSpec,
        x: &DVector<f64>,
        g: &DVector<f64>,
        b: &DMatrix<f64>,
        theta: f64,
    ) -> Result<Self, AssemblyError> {
        let (c, jac) = spec.constraints(x)?;
        Self::new(b.clone(), g.clone(), c, jac, theta, spec.eq_count())
    }

    pub fn n(&self) -> usize {
        self.g.len()
    }

    pub fn m(&self) -> usize {
        self.c.len()
    }

    /// Linearized constraint values `c + J d`.
    pub fn linearized(&self, d: &DVector<f64>) -> DVector<f64> {
        &self.c + &self.jac * d
    }

    /// `gᵀd + ½dᵀBd` plus the slack penalty.
    pub fn objective(
        &self,
        d: &DVector<f64>,
        v: &DVector<f64>,
        w: &DVector<f64>,
        t: &DVector<f64>,
    ) -> f64 {
        self.g.dot(d) + 0.5 * d.dot(&(&self.b * d)) + self.theta * (v.sum() + w.sum() + t.sum())
    }
}

/// Primal-dual answer of the elastic subproblem.
#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub d: DVector<f64>,
    pub v: DVector<f64>,
    pub w: DVector<f64>,
    pub t: DVector<f64>,
    /// Constraint multipliers, E then I.
    pub lambda: DVector<f64>,
    pub p: DVector<f64>,
    pub q: DVector<f64>,
    pub r: DVector<f64>,
    pub qp_objective: f64,
    pub status: SolveStatus,
}

impl QpSolution {
    /// Largest slack over `v`, `w` and `t`.
    pub fn max_slack(&self) -> f64 {
        self.v
            .iter()
            .chain(self.w.iter())
            .chain(self.t.iter())
            .fold(0.0_f64, |a, &b| a.max(b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStatus {
    pub iterations: usize,
    /// Whether the interior-point answer was replaced by an exact
    /// active-set solve.
    pub polished: bool,
    /// Scaled residual at exit.
    pub residual: f64,
}

/// Slack-bound multipliers implied by `lambda`: `p = θ + λ_E`,
/// `q = θ − λ_E`, `r = θ − λ_I`.
pub fn recover_slack_multipliers(
    lambda: &DVector<f64>,
    theta: f64,
    eq_count: usize,
) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let (eq, ineq) = lambda.as_slice().split_at(eq_count);
    let p = DVector::from_iterator(eq.len(), eq.iter().map(|l| theta + l));
    let q = DVector::from_iterator(eq.len(), eq.iter().map(|l| theta - l));
    let r = DVector::from_iterator(ineq.len(), ineq.iter().map(|l| theta - l));
    (p, q, r)
}

/// Dead-band used for slack and sign decisions.
pub fn classification_tolerance(theta: f64) -> f64 {
    1e-8 * theta.max(1.0)
}

/// Consistent / inconsistent linearized constraints at a subproblem solution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstraintClassification {
    pub eq_count: usize,
    /// Rows with zero slack, ascending.
    pub consistent: Vec<usize>,
    /// Rows with positive slack, ascending.
    pub inconsistent: Vec<usize>,
    /// Sign of `c_i + ∇c_iᵀd` for each equality row.
    pub signs: Vec<i8>,
}

impl ConstraintClassification {
    pub fn is_consistent(&self, i: usize) -> bool {
        self.consistent.binary_search(&i).is_ok()
    }

    pub fn consistent_eq(&self) -> impl Iterator<Item = usize> + '_ {
        self.consistent.iter().copied().filter(|&i| i < self.eq_count)
    }

    pub fn consistent_ineq(&self) -> impl Iterator<Item = usize> + '_ {
        self.consistent.iter().copied().filter(|&i| i >= self.eq_count)
    }

    pub fn inconsistent_eq(&self) -> impl Iterator<Item = usize> + '_ {
        self.inconsistent.iter().copied().filter(|&i| i < self.eq_count)
    }

    pub fn inconsistent_ineq(&self) -> impl Iterator<Item = usize> + '_ {
        self.inconsistent.iter().copied().filter(|&i| i >= self.eq_count)
    }
}

/// Splits the rows into consistent (`A_k`) and inconsistent (`V_k`) sets.
pub fn classify(qp: &QpData, sol: &QpSolution, tol: f64) -> ConstraintClassification {
    let lin = qp.linearized(&sol.d);
    let mut consistent = Vec::new();
    let mut inconsistent = Vec::new();
    let mut signs = Vec::with_capacity(qp.eq_count);
    for i in 0..qp.m() {
        let zero_slack = if i < qp.eq_count {
            let value = lin[i];
            signs.push(if value > tol {
                1
            } else if value < -tol {
                -1
            } else {
                0
            });
            sol.v[i].max(sol.w[i]) <= tol
        } else {
            sol.t[i - qp.eq_count] <= tol
        };
        if zero_slack {
            consistent.push(i);
        } else {
            inconsistent.push(i);
        }
    }
    ConstraintClassification {
        eq_count: qp.eq_count,
        consistent,
        inconsistent,
        signs,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundRule {
    /// `λ_i = −σ_i θ` on inconsistent equalities.
    InconsistentEq,
    /// `|λ_i| ≤ θ` on consistent equalities.
    ConsistentEq,
    /// `λ_i = θ` on inconsistent inequalities.
    InconsistentIneq,
    /// `0 ≤ λ_i ≤ θ` on consistent inequalities.
    ConsistentIneq,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundViolation {
    pub index: usize,
    pub lambda: f64,
    pub rule: BoundRule,
    /// Amount by which the rule is missed, beyond `tol`.
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierBoundReport {
    pub ok: bool,
    pub violations: Vec<BoundViolation>,
}

/// Checks the multiplier values each classification set forces.
pub fn check_multiplier_bounds(
    cls: &ConstraintClassification,
    lambda: &DVector<f64>,
    theta: f64,
    tol: f64,
) -> MultiplierBoundReport {
    let mut violations = Vec::new();
    for i in 0..lambda.len() {
        let l = lambda[i];
        let consistent = cls.is_consistent(i);
        let (rule, miss) = match (i < cls.eq_count, consistent) {
            (true, false) => {
                let sigma = f64::from(cls.signs[i]);
                (BoundRule::InconsistentEq, (l + sigma * theta).abs())
            }
            (true, true) => (BoundRule::ConsistentEq, l.abs() - theta),
            (false, false) => (BoundRule::InconsistentIneq, (l - theta).abs()),
            (false, true) => (BoundRule::ConsistentIneq, (-l).max(l - theta)),
        };
        if miss > tol {
            violations.push(BoundViolation {
                index: i,
                lambda: l,
                rule,
                excess: miss - tol,
            });
        }
    }
    MultiplierBoundReport {
        ok: violations.is_empty(),
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    fn solution(d: f64, v: &[f64], w: &[f64], t: &[f64], lambda: &[f64], theta: f64) -> QpSolution {
        let lambda = dv(lambda);
        let (p, q, r) = recover_slack_multipliers(&lambda, theta, v.len());
        QpSolution {
            d: dv(&[d]),
            v: dv(v),
            w: dv(w),
            t: dv(t),
            lambda,
            p,
            q,
            r,
            qp_objective: 0.0,
            status: SolveStatus {
                iterations: 0,
                polished: false,
                residual: 0.0,
            },
        }
    }

    #[test]
    fn assemble_transcribes_data() {
        let qp = QpData::new(
            DMatrix::from_element(1, 1, 2.0),
            dv(&[1.0]),
            dv(&[]),
            DMatrix::zeros(0, 1),
            1.0,
            0,
        )
        .unwrap();
        // ½·2d² + d
        let zero = dv(&[]);
        assert_eq!(qp.objective(&dv(&[-0.5]), &zero, &zero, &zero), -0.25);
        assert_eq!(qp.b_lower, 2.0);

        let eq = QpData::new(
            DMatrix::identity(1, 1),
            dv(&[0.0]),
            dv(&[1.0]),
            DMatrix::from_element(1, 1, 1.0),
            1.0,
            1,
        )
        .unwrap();
        assert_eq!(eq.linearized(&dv(&[0.25]))[0], 1.25);
        assert_eq!((eq.eq_count, eq.ineq_count), (1, 0));

        let ineq = QpData::new(
            DMatrix::identity(1, 1),
            dv(&[0.0]),
            dv(&[-0.5]),
            DMatrix::from_element(1, 1, 1.0),
            1.0,
            0,
        )
        .unwrap();
        assert_eq!(ineq.linearized(&dv(&[0.0]))[0], -0.5);
        assert_eq!((ineq.eq_count, ineq.ineq_count), (0, 1));
    }

    #[test]
    fn assemble_rejects_bad_data() {
        let mk = |b: DMatrix<f64>, g: f64, theta: f64| {
            QpData::new(b, dv(&[g, 0.0]), dv(&[]), DMatrix::zeros(0, 2), theta, 0)
        };
        assert!(matches!(
            mk(DMatrix::identity(2, 2), f64::NAN, 1.0),
            Err(AssemblyError::NonFinite("g"))
        ));
        assert!(matches!(
            mk(DMatrix::identity(2, 2), 0.0, 0.0),
            Err(AssemblyError::NonPositivePenalty(_))
        ));
        assert!(matches!(
            mk(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]), 0.0, 1.0),
            Err(AssemblyError::NotSymmetric(_))
        ));
        assert!(matches!(
            mk(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]), 0.0, 1.0),
            Err(AssemblyError::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn slack_multiplier_recovery() {
        let (p, q, r) = recover_slack_multipliers(&dv(&[0.5]), 2.0, 1);
        assert_eq!((p[0], q[0], r.len()), (2.5, 1.5, 0));
        let (p, q, _) = recover_slack_multipliers(&dv(&[-1.0]), 1.0, 1);
        assert_eq!((p[0], q[0]), (0.0, 2.0));
        let (p, _, r) = recover_slack_multipliers(&dv(&[3.0]), 3.0, 0);
        assert_eq!((p.len(), r[0]), (0, 0.0));
    }

    fn one_eq(c: f64) -> QpData {
        QpData::new(
            DMatrix::identity(1, 1),
            dv(&[0.0]),
            dv(&[c]),
            DMatrix::from_element(1, 1, 1.0),
            1.0,
            1,
        )
        .unwrap()
    }

    #[test]
    fn classify_examples() {
        let qp = QpData::new(
            DMatrix::identity(1, 1),
            dv(&[0.0]),
            dv(&[0.0, 0.0]),
            DMatrix::from_element(2, 1, 1.0),
            1.0,
            1,
        )
        .unwrap();
        let sol = solution(0.0, &[0.0], &[0.0], &[0.0], &[0.0, 0.0], 1.0);
        let cls = classify(&qp, &sol, 1e-8);
        assert_eq!(cls.consistent, vec![0, 1]);
        assert!(cls.inconsistent.is_empty());
        assert_eq!(cls.signs, vec![0]);

        // 5 + d = v − w solved by d = −1, v = 4.
        let qp = one_eq(5.0);
        let sol = solution(-1.0, &[4.0], &[0.0], &[], &[-1.0], 1.0);
        let cls = classify(&qp, &sol, 1e-8);
        assert_eq!(cls.inconsistent_eq().collect::<Vec<_>>(), vec![0]);
        assert_eq!(cls.signs, vec![1]);

        let qp = QpData::new(
            DMatrix::identity(1, 1),
            dv(&[0.0]),
            dv(&[-0.3]),
            DMatrix::from_element(1, 1, 1.0),
            1.0,
            0,
        )
        .unwrap();
        let sol = solution(0.0, &[], &[], &[0.3], &[1.0], 1.0);
        let cls = classify(&qp, &sol, 1e-8);
        assert_eq!(cls.inconsistent_ineq().collect::<Vec<_>>(), vec![0]);
        // idempotent
        assert_eq!(classify(&qp, &sol, 1e-8), cls);
    }

    #[test]
    fn multiplier_bound_examples() {
        let cls = ConstraintClassification {
            eq_count: 1,
            consistent: vec![],
            inconsistent: vec![0],
            signs: vec![1],
        };
        assert!(check_multiplier_bounds(&cls, &dv(&[-1.0]), 1.0, 1e-8).ok);

        let cls = ConstraintClassification {
            eq_count: 1,
            consistent: vec![0],
            inconsistent: vec![],
            signs: vec![0],
        };
        assert!(check_multiplier_bounds(&cls, &dv(&[-1.0]), 1.0, 1e-8).ok);

        let cls = ConstraintClassification {
            eq_count: 0,
            consistent: vec![0],
            inconsistent: vec![],
            signs: vec![],
        };
        let report = check_multiplier_bounds(&cls, &dv(&[1.5]), 1.0, 1e-8);
        assert!(!report.ok);
        assert_eq!(report.violations[0].rule, BoundRule::ConsistentIneq);
        assert!((report.violations[0].excess - 0.5).abs() < 1e-7);
    }
}
