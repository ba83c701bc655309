//! Outer SQP loop: evaluate, solve the elastic QP, stop, update θ, search, step.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::globalization::{
    line_search, update_penalty, LineSearchError, LineSearchOutcome, LineSearchParams,
    DEFAULT_ALPHA_MIN, DEFAULT_ETA, DEFAULT_GAMMA, DEFAULT_TAU_ALPHA,
};
use crate::problem::{kkt_report, KktReport, ProblemError, ProblemSpec};
use crate::qp::{
    check_multiplier_bounds, classification_tolerance, classify, solve_qp, ConstraintClassification,
    MultiplierBoundReport, QpData, QpSolverSettings,
};

/// Rule producing the model matrix `B_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BRule {
    /// `b·I` at every iteration.
    Fixed(f64),
    /// `early·I` before `switch_iter`, `late·I` from then on.
    TwoPhase { early: f64, late: f64, switch_iter: usize },
}

impl BRule {
    /// Scalar `b` such that `B_k = b·I`.
    pub fn scale(&self, k: usize) -> f64 {
        match *self {
            BRule::Fixed(b) => b,
            BRule::TwoPhase { early, late, switch_iter } => {
                if k < switch_iter {
                    early
                } else {
                    late
                }
            }
        }
    }

    /// Smallest value the rule ever produces.
    pub fn min_scale(&self) -> f64 {
        match *self {
            BRule::Fixed(b) => b,
            BRule::TwoPhase { early, late, .. } => early.min(late),
        }
    }

    /// Value used from `switch_iter` on, which governs the tail.
    pub fn tail_scale(&self) -> f64 {
        match *self {
            BRule::Fixed(b) => b,
            BRule::TwoPhase { late, .. } => late,
        }
    }
}

pub fn update_b(rule: &BRule, k: usize, n: usize) -> DMatrix<f64> {
    DMatrix::identity(n, n) * rule.scale(k)
}

/// Default fixed scale `1.1·max(1, ρ)`.
pub fn default_b(rho: Option<f64>) -> f64 {
    1.1 * rho.unwrap_or(0.0).max(1.0)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

/// Parameters of the outer loop.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub eta: f64,
    pub tau_alpha: f64,
    pub gamma: f64,
    pub theta0: f64,
    pub alpha_min: f64,
    pub eps: f64,
    pub eps_c: f64,
    pub max_iter: usize,
    pub b_rule: BRule,
    pub qp: QpSolverSettings,
    /// Tolerance of the per-iteration multiplier-bound monitor.
    pub bound_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eta: DEFAULT_ETA,
            tau_alpha: DEFAULT_TAU_ALPHA,
            gamma: DEFAULT_GAMMA,
            theta0: 1.0,
            alpha_min: DEFAULT_ALPHA_MIN,
            eps: 1e-8,
            eps_c: 1e-8,
            max_iter: 500,
            b_rule: BRule::Fixed(default_b(None)),
            qp: QpSolverSettings::default(),
            bound_tol: 1e-8,
        }
    }
}

impl SolverConfig {
    /// Defaults with the fixed scale derived from the problem's declared ρ.
    pub fn for_problem(spec: &ProblemSpec) -> Self {
        Self {
            b_rule: BRule::Fixed(default_b(spec.rho())),
            ..Self::default()
        }
    }

    pub fn line_search_params(&self) -> LineSearchParams {
        LineSearchParams {
            eta: self.eta,
            tau_alpha: self.tau_alpha,
            alpha_min: self.alpha_min,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !open_unit(self.eta) {
            return Err(invalid(format!("eta = {} must lie in (0, 1)", self.eta)));
        }
        if !open_unit(self.tau_alpha) {
            return Err(invalid(format!("tau_alpha = {} must lie in (0, 1)", self.tau_alpha)));
        }
        if !(self.alpha_min > 0.0 && self.alpha_min <= 1.0) {
            return Err(invalid(format!("alpha_min = {} must lie in (0, 1]", self.alpha_min)));
        }
        for (name, v) in [
            ("gamma", self.gamma),
            ("theta0", self.theta0),
            ("eps", self.eps),
            ("eps_c", self.eps_c),
            ("bound_tol", self.bound_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} = {v} must be positive")));
            }
        }
        let (lo, hi) = match self.b_rule {
            BRule::Fixed(b) => (b, b),
            BRule::TwoPhase { early, late, .. } => (early.min(late), early.max(late)),
        };
        if !(lo > 0.0 && hi.is_finite()) {
            return Err(invalid("b values must be positive and finite"));
        }
        if self.max_iter == 0 {
            return Err(invalid("max_iter must be at least 1"));
        }
        self.qp
            .validate()
            .map_err(|_| invalid("invalid QP solver settings"))?;
        Ok(())
    }
}

/// One iteration of the outer loop.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    pub x: DVector<f64>,
    pub f: f64,
    pub g: DVector<f64>,
    /// Constraint violation `v(x_k)`.
    pub v: f64,
    /// `φ(x_k, θ)` with `θ` the value below.
    pub merit: f64,
    /// Penalty used in the line search (after the update).
    pub theta: f64,
    /// Penalty used in the QP.
    pub theta_qp: f64,
    /// Accepted step; 0 on a terminal record that takes no step.
    pub alpha: f64,
    pub d: DVector<f64>,
    pub step_norm: f64,
    pub b: DMatrix<f64>,
    pub lambda: DVector<f64>,
    pub lambda_inf: f64,
    pub slack_v: DVector<f64>,
    pub slack_w: DVector<f64>,
    pub slack_t: DVector<f64>,
    pub max_slack: f64,
    pub classification: ConstraintClassification,
    pub kkt: KktReport,
    pub multiplier_bounds: MultiplierBoundReport,
    pub line_search: Option<LineSearchOutcome>,
}

impl IterationRecord {
    /// `½ dᵀBd`.
    pub fn model_decrease(&self) -> f64 {
        0.5 * self.d.dot(&(&self.b * &self.d))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    QpFailure,
    LineSearchFailure,
    OracleFailure,
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub status: SolveStatus,
    pub trace: Vec<IterationRecord>,
    /// Cause of an abnormal stop.
    pub message: Option<String>,
}

impl SolveOutcome {
    pub fn final_record(&self) -> Option<&IterationRecord> {
        self.trace.last()
    }

    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("invalid solver configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("invalid starting point: {0}")]
    Start(ProblemError),
}

/// Runs the line-search SQP method from `x0`.
pub fn solve(
    spec: &ProblemSpec,
    x0: &DVector<f64>,
    config: &SolverConfig,
) -> Result<SolveOutcome, SolveError> {
    config.validate()?;
    if x0.len() != spec.n() {
        return Err(SolveError::Start(ProblemError::Dimension {
            what: "starting point",
            expected: spec.n(),
            got: x0.len(),
        }));
    }
    spec.bounds().check(x0).map_err(SolveError::Start)?;

    let n = spec.n();
    let params = config.line_search_params();
    let mut trace = Vec::new();
    let mut x = x0.clone();
    let mut theta = config.theta0;
    let stop = |status, trace, message: Option<String>| SolveOutcome { status, trace, message };

    for k in 0..config.max_iter {
        let eval = match spec.evaluate(&x) {
            Ok(e) => e,
            Err(e) => return Ok(stop(SolveStatus::OracleFailure, trace, Some(e.to_string()))),
        };
        let b = update_b(&config.b_rule, k, n);
        let qp = match QpData::new(b.clone(), eval.g.clone(), eval.c.clone(), eval.jac.clone(), theta, spec.eq_count()) {
            Ok(qp) => qp,
            Err(e) => return Ok(stop(SolveStatus::OracleFailure, trace, Some(e.to_string()))),
        };
        let sol = match solve_qp(&qp, &config.qp) {
            Ok(s) => s,
            Err(e) => return Ok(stop(SolveStatus::QpFailure, trace, Some(e.to_string()))),
        };
        let classification = classify(&qp, &sol, classification_tolerance(theta));
        let multiplier_bounds = check_multiplier_bounds(&classification, &sol.lambda, theta, config.bound_tol);
        let v = spec.constraint_violation(&eval.c);
        let kkt = kkt_report(spec.eq_count(), &eval.g, &eval.c, &eval.jac, &sol.lambda)
            .expect("dimensions agree by construction");
        let step_norm = sol.d.norm();
        let converged = step_norm <= config.eps && v <= config.eps_c;
        let theta_qp = theta;
        if !converged {
            theta = update_penalty(theta, &sol.lambda, config.gamma);
        }
        let mut record = IterationRecord {
            k,
            f: eval.f,
            g: eval.g,
            v,
            merit: eval.f + theta * v,
            theta,
            theta_qp,
            alpha: 0.0,
            step_norm,
            lambda_inf: sol.lambda.amax(),
            max_slack: sol.max_slack(),
            b,
            classification,
            kkt,
            multiplier_bounds,
            line_search: None,
            x: x.clone(),
            d: sol.d,
            lambda: sol.lambda,
            slack_v: sol.v,
            slack_w: sol.w,
            slack_t: sol.t,
        };
        if converged {
            trace.push(record);
            return Ok(stop(SolveStatus::Converged, trace, None));
        }
        match line_search(spec, &x, &record.d, theta, &record.b, &params) {
            Ok(ls) => {
                record.alpha = ls.alpha;
                record.merit = ls.base_merit;
                x += &record.d * ls.alpha;
                record.line_search = Some(ls);
                trace.push(record);
            }
            Err(e) => {
                let status = match e {
                    LineSearchError::Oracle(_) => SolveStatus::OracleFailure,
                    _ => SolveStatus::LineSearchFailure,
                };
                trace.push(record);
                return Ok(stop(status, trace, Some(e.to_string())));
            }
        }
    }
    Ok(stop(SolveStatus::MaxIterations, trace, None))
}
