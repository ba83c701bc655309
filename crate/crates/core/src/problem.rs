//! Problem oracles, feasibility measures and oracle validation.
//!
//! A [`ProblemSpec`] bundles the objective oracle (value plus one Clarke
//! subgradient), the constraint oracle (values plus gradient rows) and the
//! declared constants that the convergence theory relies on: the upper-C²
//! modulus `rho` and the gradient-Lipschitz constant `lip_h` of the
//! constraints. Constraint rows are always ordered equalities first, then
//! inequalities (`c_i(x) >= 0`).

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Absolute per-coordinate tolerance for box membership.
pub const BOX_TOLERANCE: f64 = 1e-9;

pub type ObjectiveFn = dyn Fn(&DVector<f64>) -> (f64, DVector<f64>) + Send + Sync;
pub type ConstraintFn = dyn Fn(&DVector<f64>) -> (DVector<f64>, DMatrix<f64>) + Send + Sync;
pub type HessianFn = dyn Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("coordinate {index} = {value} lies outside the box [{lower}, {upper}]")]
    OutOfDomain {
        index: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("oracle returned a non-finite {what} at x = {x:?}")]
    NonFinite { what: &'static str, x: Vec<f64> },
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}

/// Axis-aligned working box `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl Bounds {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Self {
        assert_eq!(lower.len(), upper.len(), "bounds must have equal length");
        assert!(
            lower.iter().zip(upper.iter()).all(|(l, u)| l <= u),
            "lower bound exceeds upper bound"
        );
        Self { lower, upper }
    }

    /// The box `[lo, hi]^n`.
    pub fn uniform(n: usize, lo: f64, hi: f64) -> Self {
        Self::new(DVector::from_element(n, lo), DVector::from_element(n, hi))
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        self.check(x).is_ok()
    }

    pub fn check(&self, x: &DVector<f64>) -> Result<(), ProblemError> {
        if x.len() != self.dim() {
            return Err(ProblemError::Dimension {
                what: "point",
                expected: self.dim(),
                got: x.len(),
            });
        }
        for (index, ((&value, &lower), &upper)) in
            x.iter().zip(self.lower.iter()).zip(self.upper.iter()).enumerate()
        {
            if !(value >= lower - BOX_TOLERANCE && value <= upper + BOX_TOLERANCE) {
                return Err(ProblemError::OutOfDomain {
                    index,
                    value,
                    lower,
                    upper,
                });
            }
        }
        Ok(())
    }

    pub fn is_bounded(&self) -> bool {
        self.lower.iter().chain(self.upper.iter()).all(|v| v.is_finite())
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            self.lower
                .iter()
                .zip(self.upper.iter())
                .map(|(&l, &u)| if l == u { l } else { rng.gen_range(l..=u) }),
        )
    }
}

/// Known minimizer attached to a problem for testing.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub x: DVector<f64>,
    pub f: f64,
}

/// Oracle values at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub f: f64,
    pub g: DVector<f64>,
    pub c: DVector<f64>,
    pub jac: DMatrix<f64>,
}

/// Objective/constraint oracles plus the constants declared for them.
#[derive(Clone)]
pub struct ProblemSpec {
    n: usize,
    eq_count: usize,
    user_ineq_count: usize,
    objective: Arc<ObjectiveFn>,
    constraints: Option<Arc<ConstraintFn>>,
    hessians: Option<Arc<HessianFn>>,
    rho: Option<f64>,
    lip_h: Option<f64>,
    bounds: Bounds,
    box_rows: bool,
    reference: Option<Reference>,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("n", &self.n)
            .field("eq_count", &self.eq_count)
            .field("ineq_count", &self.ineq_count())
            .field("rho", &self.rho)
            .field("lip_h", &self.lip_h)
            .field("bounds", &self.bounds)
            .field("box_rows", &self.box_rows)
            .field("has_hessians", &self.hessians.is_some())
            .finish()
    }
}

impl ProblemSpec {
    /// Unconstrained problem on the box `bounds`.
    pub fn new<F>(bounds: Bounds, objective: F) -> Self
    where
        F: Fn(&DVector<f64>) -> (f64, DVector<f64>) + Send + Sync + 'static,
    {
        Self {
            n: bounds.dim(),
            eq_count: 0,
            user_ineq_count: 0,
            objective: Arc::new(objective),
            constraints: None,
            hessians: None,
            rho: None,
            lip_h: None,
            bounds,
            box_rows: false,
            reference: None,
        }
    }

    /// Attaches a constraint oracle returning `eq_count` equality rows
    /// followed by `ineq_count` inequality rows.
    pub fn with_constraints<C>(mut self, eq_count: usize, ineq_count: usize, oracle: C) -> Self
    where
        C: Fn(&DVector<f64>) -> (DVector<f64>, DMatrix<f64>) + Send + Sync + 'static,
    {
        self.eq_count = eq_count;
        self.user_ineq_count = ineq_count;
        self.constraints = Some(Arc::new(oracle));
        self
    }

    /// Per-row constraint Hessians (user rows only; box rows are affine).
    pub fn with_hessians<H>(mut self, oracle: H) -> Self
    where
        H: Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync + 'static,
    {
        self.hessians = Some(Arc::new(oracle));
        self
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        assert!(rho >= 0.0, "rho must be nonnegative");
        self.rho = Some(rho);
        self
    }

    pub fn with_lip_h(mut self, lip_h: f64) -> Self {
        assert!(lip_h >= 0.0, "H must be nonnegative");
        self.lip_h = Some(lip_h);
        self
    }

    /// Appends the box as inequality rows `x_j - lo_j >= 0` (all j) then
    /// `hi_j - x_j >= 0` (all j), after the user inequalities.
    pub fn with_box_constraints(mut self) -> Self {
        assert!(self.bounds.is_bounded(), "box rows need a bounded box");
        self.box_rows = true;
        self
    }

    pub fn with_reference(mut self, x: DVector<f64>, f: f64) -> Self {
        self.reference = Some(Reference { x, f });
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn eq_count(&self) -> usize {
        self.eq_count
    }

    /// Inequality rows, box rows included.
    pub fn ineq_count(&self) -> usize {
        self.user_ineq_count + if self.box_rows { 2 * self.n } else { 0 }
    }

    pub fn m(&self) -> usize {
        self.eq_count + self.ineq_count()
    }

    pub fn rho(&self) -> Option<f64> {
        self.rho
    }

    pub fn lip_h(&self) -> Option<f64> {
        self.lip_h
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn has_box_rows(&self) -> bool {
        self.box_rows
    }

    pub fn has_hessians(&self) -> bool {
        self.hessians.is_some() || self.constraints.is_none()
    }

    pub fn reference(&self) -> Option<&Reference> {
        self.reference.as_ref()
    }

    /// Whether row `i` (in E-then-I order) is an equality.
    pub fn is_equality(&self, i: usize) -> bool {
        i < self.eq_count
    }

    /// Objective value and subgradient, with finiteness checks but no box check.
    pub fn objective(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>), ProblemError> {
        self.check_dim(x)?;
        let (f, g) = (self.objective)(x);
        if !f.is_finite() {
            return Err(non_finite("objective value", x));
        }
        if g.len() != self.n {
            return Err(ProblemError::Dimension {
                what: "subgradient",
                expected: self.n,
                got: g.len(),
            });
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(non_finite("subgradient", x));
        }
        Ok((f, g))
    }

    /// Constraint values and Jacobian (rows `∇c_i(x)ᵀ`), box rows appended.
    pub fn constraints(
        &self,
        x: &DVector<f64>,
    ) -> Result<(DVector<f64>, DMatrix<f64>), ProblemError> {
        self.check_dim(x)?;
        let m = self.m();
        let mut c = DVector::zeros(m);
        let mut jac = DMatrix::zeros(m, self.n);
        let user = self.eq_count + self.user_ineq_count;
        if let Some(oracle) = &self.constraints {
            let (cu, ju) = oracle(x);
            if cu.len() != user || ju.nrows() != user || ju.ncols() != self.n {
                return Err(ProblemError::Dimension {
                    what: "constraint oracle output",
                    expected: user,
                    got: cu.len(),
                });
            }
            c.rows_mut(0, user).copy_from(&cu);
            jac.view_mut((0, 0), (user, self.n)).copy_from(&ju);
        }
        if self.box_rows {
            for j in 0..self.n {
                c[user + j] = x[j] - self.bounds.lower[j];
                jac[(user + j, j)] = 1.0;
                c[user + self.n + j] = self.bounds.upper[j] - x[j];
                jac[(user + self.n + j, j)] = -1.0;
            }
        }
        if c.iter().chain(jac.iter()).any(|v| !v.is_finite()) {
            return Err(non_finite("constraint value or gradient", x));
        }
        Ok((c, jac))
    }

    /// Per-row constraint Hessians in E-then-I order, or `None` when the
    /// problem does not provide them.
    pub fn constraint_hessians(&self, x: &DVector<f64>) -> Option<Vec<DMatrix<f64>>> {
        let user = self.eq_count + self.user_ineq_count;
        let mut out = match (&self.constraints, &self.hessians) {
            (None, _) => Vec::new(),
            (Some(_), Some(h)) => {
                let hs = h(x);
                if hs.len() != user {
                    return None;
                }
                hs
            }
            (Some(_), None) => return None,
        };
        if self.box_rows {
            out.extend((0..2 * self.n).map(|_| DMatrix::zeros(self.n, self.n)));
        }
        Some(out)
    }

    /// Bundles both oracles at `x`; `x` must lie in the box.
    pub fn evaluate(&self, x: &DVector<f64>) -> Result<Evaluation, ProblemError> {
        self.bounds.check(x)?;
        let (f, g) = self.objective(x)?;
        let (c, jac) = self.constraints(x)?;
        Ok(Evaluation { f, g, c, jac })
    }

    /// `Σ_E |c_i| + Σ_I [c_i]⁻`.
    pub fn constraint_violation(&self, c: &DVector<f64>) -> f64 {
        debug_assert_eq!(c.len(), self.m());
        let (eq, ineq) = c.as_slice().split_at(self.eq_count);
        eq.iter().map(|v| v.abs()).sum::<f64>() + ineq.iter().map(|&v| neg_part(v)).sum::<f64>()
    }

    /// First-order optimality residuals at `x` with subgradient witness `g`
    /// and multipliers `lambda`.
    pub fn kkt_residual(
        &self,
        x: &DVector<f64>,
        g: &DVector<f64>,
        lambda: &DVector<f64>,
    ) -> Result<KktReport, ProblemError> {
        let (c, jac) = self.constraints(x)?;
        kkt_report(self.eq_count, g, &c, &jac, lambda)
    }

    /// Samples pairs in the box and measures the upper-C² inequality with
    /// the declared `rho`.
    pub fn validate_upper_c2(
        &self,
        sample_count: usize,
        seed: u64,
    ) -> Result<UpperC2Report, ProblemError> {
        assert!(sample_count >= 1, "sample_count must be positive");
        assert!(self.bounds.is_bounded(), "validation needs a bounded box");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut samples = Vec::with_capacity(sample_count);
        for _ in 0..sample_count {
            let x = self.bounds.sample(&mut rng);
            let xbar = self.bounds.sample(&mut rng);
            let (fx, _) = self.objective(&x)?;
            let (fbar, gbar) = self.objective(&xbar)?;
            let diff = &x - &xbar;
            let excess = fx - fbar - gbar.dot(&diff);
            samples.push((excess, diff.norm_squared(), x, xbar));
        }
        let rho_estimate = samples
            .iter()
            .filter(|(_, dist2, _, _)| *dist2 > 0.0)
            .map(|(excess, dist2, _, _)| 2.0 * excess / dist2)
            .fold(0.0_f64, f64::max);
        let rho = self.rho.unwrap_or(rho_estimate);
        let (max_violation, worst_pair) = samples
            .into_iter()
            .map(|(excess, dist2, x, xbar)| (excess - 0.5 * rho * dist2, (x, xbar)))
            .fold((f64::NEG_INFINITY, None), |best, (v, pair)| {
                if v > best.0 {
                    (v, Some(pair))
                } else {
                    best
                }
            });
        Ok(UpperC2Report {
            max_violation,
            worst_pair,
            rho_checked: rho,
            rho_declared: self.rho.is_some(),
            rho_estimate,
        })
    }

    /// Samples pairs in the box and measures the constraint linearization
    /// error against `(H/2)‖x′ − x‖²`.
    pub fn validate_linearization(
        &self,
        sample_count: usize,
        seed: u64,
    ) -> Result<LinearizationReport, ProblemError> {
        assert!(sample_count >= 1, "sample_count must be positive");
        assert!(self.bounds.is_bounded(), "validation needs a bounded box");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // (error, squared distance, x, x′, row) per sampled row
        let mut samples = Vec::with_capacity(sample_count * self.m());
        for _ in 0..sample_count {
            let x = self.bounds.sample(&mut rng);
            let xp = self.bounds.sample(&mut rng);
            let (c, jac) = self.constraints(&x)?;
            let (cp, _) = self.constraints(&xp)?;
            let diff = &xp - &x;
            let dist2 = diff.norm_squared();
            let err = (&cp - &c - &jac * &diff).abs();
            for (row, &e) in err.iter().enumerate() {
                samples.push((e, dist2, x.clone(), xp.clone(), row));
            }
        }
        let h_estimate = samples
            .iter()
            .filter(|s| s.1 > 0.0)
            .map(|s| 2.0 * s.0 / s.1)
            .fold(0.0_f64, f64::max);
        let h = self.lip_h.unwrap_or(h_estimate);
        let mut report = LinearizationReport {
            max_violation: f64::NEG_INFINITY,
            worst_pair: None,
            worst_row: None,
            h_checked: h,
            h_declared: self.lip_h.is_some(),
            h_estimate,
        };
        for (e, dist2, x, xp, row) in samples {
            let v = e - 0.5 * h * dist2;
            if v > report.max_violation {
                report.max_violation = v;
                report.worst_pair = Some((x, xp));
                report.worst_row = Some(row);
            }
        }
        Ok(report)
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<(), ProblemError> {
        if x.len() != self.n {
            return Err(ProblemError::Dimension {
                what: "point",
                expected: self.n,
                got: x.len(),
            });
        }
        Ok(())
    }
}

fn non_finite(what: &'static str, x: &DVector<f64>) -> ProblemError {
    ProblemError::NonFinite {
        what,
        x: x.iter().copied().collect(),
    }
}

/// `[y]⁻ = max(0, −y)`.
pub fn neg_part(y: f64) -> f64 {
    (-y).max(0.0)
}

/// Residuals of the first-order optimality system.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktReport {
    /// `‖g − Σ λ_i ∇c_i(x)‖`.
    pub stationarity: f64,
    /// `max_E |c_i|`.
    pub primal_eq: f64,
    /// `max_I [c_i]⁻`.
    pub primal_ineq: f64,
    /// `max_I |λ_i c_i|`.
    pub complementarity: f64,
    /// `max_I [λ_i]⁻`.
    pub dual_sign: f64,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal_eq)
            .max(self.primal_ineq)
            .max(self.complementarity)
            .max(self.dual_sign)
    }
}

/// KKT residuals from already evaluated constraint data.
pub fn kkt_report(
    eq_count: usize,
    g: &DVector<f64>,
    c: &DVector<f64>,
    jac: &DMatrix<f64>,
    lambda: &DVector<f64>,
) -> Result<KktReport, ProblemError> {
    if lambda.len() != c.len() {
        return Err(ProblemError::Dimension {
            what: "multiplier vector",
            expected: c.len(),
            got: lambda.len(),
        });
    }
    if g.len() != jac.ncols() {
        return Err(ProblemError::Dimension {
            what: "subgradient",
            expected: jac.ncols(),
            got: g.len(),
        });
    }
    let stationarity = (g - jac.transpose() * lambda).norm();
    let mut report = KktReport {
        stationarity,
        ..KktReport::default()
    };
    for (i, (&ci, &li)) in c.iter().zip(lambda.iter()).enumerate() {
        if i < eq_count {
            report.primal_eq = report.primal_eq.max(ci.abs());
        } else {
            report.primal_ineq = report.primal_ineq.max(neg_part(ci));
            report.complementarity = report.complementarity.max((li * ci).abs());
            report.dual_sign = report.dual_sign.max(neg_part(li));
        }
    }
    Ok(report)
}

/// Outcome of [`ProblemSpec::validate_upper_c2`].
#[derive(Debug, Clone, PartialEq)]
pub struct UpperC2Report {
    /// Largest sampled `f(x) − f(x̄) − ⟨g, x − x̄⟩ − (ρ/2)‖x − x̄‖²`.
    pub max_violation: f64,
    /// The `(x, x̄)` pair attaining `max_violation`.
    pub worst_pair: Option<(DVector<f64>, DVector<f64>)>,
    pub rho_checked: f64,
    pub rho_declared: bool,
    /// Smallest ρ for which every sampled inequality holds.
    pub rho_estimate: f64,
}

impl UpperC2Report {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_violation <= tol
    }
}

/// Outcome of [`ProblemSpec::validate_linearization`].
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizationReport {
    /// Largest sampled `|c_i(x′) − c_i(x) − ∇c_i(x)ᵀ(x′ − x)| − (H/2)‖x′ − x‖²`.
    pub max_violation: f64,
    pub worst_pair: Option<(DVector<f64>, DVector<f64>)>,
    pub worst_row: Option<usize>,
    pub h_checked: f64,
    pub h_declared: bool,
    pub h_estimate: f64,
}

impl LinearizationReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_violation <= tol
    }
}
