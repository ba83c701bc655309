//! Trace monitors for the convergence invariants of the method.

use nalgebra::DVector;

use super::potential::{conjugate_value, f_convex, linearized_feasible, PotentialParams, GRID_ERROR};
use super::AnalysisError;
use crate::driver::{IterationRecord, SolverConfig};
use crate::globalization::{merit, step_size_lower_bound};
use crate::problem::ProblemSpec;

/// Slack level treated as zero by the tail monitors.
pub const SLACK_ZERO: f64 = 1e-10;
/// Slack allowed on accepted-step decrease checks.
pub const DECREASE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorResult {
    pub name: &'static str,
    pub passed: bool,
    /// Signed distance to the threshold; negative when failing.
    pub margin: f64,
    pub detail: String,
}

impl MonitorResult {
    fn new(name: &'static str, margin: f64, detail: String) -> Self {
        Self {
            name,
            passed: margin >= 0.0,
            margin,
            detail,
        }
    }
}

/// Scalar `b` of a record whose `B` is `b·I`.
fn b_scale(r: &IterationRecord) -> f64 {
    r.b.diagonal().min()
}

/// Multiplier-bound report of every QP solve.
pub fn multiplier_bounds(trace: &[IterationRecord]) -> MonitorResult {
    let bad: Vec<usize> = trace.iter().filter(|r| !r.multiplier_bounds.ok).map(|r| r.k).collect();
    let worst = trace
        .iter()
        .flat_map(|r| r.multiplier_bounds.violations.iter().map(|v| v.excess))
        .fold(0.0_f64, f64::max);
    MonitorResult::new(
        "multiplier-bounds",
        if bad.is_empty() { 0.0 } else { -worst },
        if bad.is_empty() {
            format!("{} QP solves within bounds", trace.len())
        } else {
            format!("violations at iterations {bad:?}, worst excess {worst:e}")
        },
    )
}

/// Next iterate after record `i`.
fn next_x(trace: &[IterationRecord], i: usize) -> DVector<f64> {
    match trace.get(i + 1) {
        Some(n) => n.x.clone(),
        None => &trace[i].x + &trace[i].d * trace[i].alpha,
    }
}

/// Accepted steps checked against freshly recomputed merits.
pub fn line_search_contract(
    spec: &ProblemSpec,
    trace: &[IterationRecord],
    config: &SolverConfig,
) -> Result<MonitorResult, AnalysisError> {
    let mut worst = f64::INFINITY;
    let mut worst_k = None;
    for (i, r) in trace.iter().enumerate() {
        if r.line_search.is_none() {
            continue;
        }
        let before = merit(spec, &r.x, r.theta)?;
        let after = merit(spec, &next_x(trace, i), r.theta)?;
        let margin = before - after - config.eta * r.alpha * r.model_decrease() + DECREASE_SLACK;
        if margin < worst {
            worst = margin;
            worst_k = Some(r.k);
        }
    }
    let steps = trace.iter().filter(|r| r.line_search.is_some()).count();
    Ok(MonitorResult::new(
        "line-search",
        if worst.is_finite() { worst } else { 0.0 },
        format!("{steps} accepted steps, tightest at {worst_k:?} with margin {worst:e}"),
    ))
}

/// `merit_k − merit_{k+1} ≥ η·α_k·½dᵀBd` on consecutive records with equal θ.
pub fn merit_telescoping(trace: &[IterationRecord], config: &SolverConfig) -> MonitorResult {
    let worst = trace
        .windows(2)
        .filter(|w| w[0].theta == w[1].theta && w[0].line_search.is_some())
        .map(|w| w[0].merit - w[1].merit - config.eta * w[0].alpha * w[0].model_decrease() + DECREASE_SLACK)
        .fold(f64::INFINITY, f64::min);
    MonitorResult::new(
        "merit-decrease",
        if worst.is_finite() { worst } else { 0.0 },
        format!("smallest margin {worst:e}"),
    )
}

/// θ identical over the final half of the trace.
pub fn theta_tail(trace: &[IterationRecord]) -> MonitorResult {
    let start = trace.len() / 2;
    let tail = &trace[start..];
    let changes = tail.windows(2).filter(|w| w[0].theta != w[1].theta).count();
    let spread = tail.iter().map(|r| r.theta).fold(f64::NEG_INFINITY, f64::max)
        - tail.iter().map(|r| r.theta).fold(f64::INFINITY, f64::min);
    MonitorResult::new(
        "theta-tail",
        if changes == 0 { 0.0 } else { -spread },
        format!("{changes} changes over iterations {start}..{}", trace.len()),
    )
}

/// Largest slack over the final `window` records.
pub fn slack_tail(trace: &[IterationRecord], window: usize) -> MonitorResult {
    let start = trace.len().saturating_sub(window);
    let worst = trace[start..].iter().map(|r| r.max_slack).fold(0.0_f64, f64::max);
    MonitorResult::new(
        "slack-tail",
        SLACK_ZERO - worst,
        format!("max slack {worst:e} over the last {} iterations", trace.len() - start),
    )
}

/// First record from which every slack stays at zero.
pub fn slack_free_start(trace: &[IterationRecord]) -> usize {
    trace
        .iter()
        .rposition(|r| r.max_slack > SLACK_ZERO)
        .map_or(0, |i| i + 1)
}

/// `α_k = 1` on every step taken after the slacks vanish.
pub fn full_step(trace: &[IterationRecord]) -> MonitorResult {
    let start = trace.iter().position(|r| r.max_slack <= SLACK_ZERO).unwrap_or(trace.len());
    let short: Vec<usize> = trace[start..]
        .iter()
        .filter(|r| r.line_search.is_some() && r.alpha != 1.0)
        .map(|r| r.k)
        .collect();
    let smallest = trace[start..]
        .iter()
        .filter(|r| r.line_search.is_some())
        .map(|r| r.alpha)
        .fold(1.0_f64, f64::min);
    MonitorResult::new(
        "full-step",
        if short.is_empty() { 0.0 } else { smallest - 1.0 },
        if short.is_empty() {
            format!("unit steps from iteration {start}")
        } else {
            format!("short steps at {short:?}")
        },
    )
}

/// Final step below `eps`; the largest step over the last ten is reported.
pub fn step_vanishing(trace: &[IterationRecord], eps: f64) -> MonitorResult {
    let last = trace.last().map_or(f64::INFINITY, |r| r.step_norm);
    let start = trace.len().saturating_sub(10);
    let tail_max = trace[start..].iter().map(|r| r.step_norm).fold(0.0_f64, f64::max);
    MonitorResult::new(
        "step-vanishing",
        eps - last,
        format!("final ‖d‖ = {last:e}, max over last 10 = {tail_max:e} (10ε = {:e})", 10.0 * eps),
    )
}

/// Accepted steps over the constant-θ tail stay above the backtracking bound.
pub fn step_size_bound(
    spec: &ProblemSpec,
    trace: &[IterationRecord],
    config: &SolverConfig,
) -> Result<MonitorResult, AnalysisError> {
    let rho = spec.rho().ok_or(AnalysisError::MissingConstant("rho"))?;
    let lip_h = spec.lip_h().ok_or(AnalysisError::MissingConstant("H"))?;
    let Some(last) = trace.last() else {
        return Err(AnalysisError::EmptyTail);
    };
    let start = trace.iter().position(|r| r.theta == last.theta).unwrap_or(0);
    let mut worst = f64::INFINITY;
    for r in trace[start..].iter().filter(|r| r.line_search.is_some()) {
        let bound = step_size_lower_bound(config.tau_alpha, b_scale(r), rho, r.theta, spec.m(), lip_h);
        worst = worst.min(r.alpha - bound);
    }
    Ok(MonitorResult::new(
        "step-size-bound",
        if worst.is_finite() { worst } else { 0.0 },
        format!("tail from iteration {start}, smallest α − bound {worst:e}"),
    ))
}

/// Per-step entry of the potential descent check.
#[derive(Debug, Clone, PartialEq)]
pub struct DescentStep {
    /// `k` of the later potential value `L_k`.
    pub k: usize,
    pub previous: f64,
    pub current: f64,
    pub difference: f64,
    /// `2(L_{k−1} − L_k)/‖d_{k−1}‖²`, absent when the step is zero.
    pub c_d: Option<f64>,
    /// Fenchel–Young residual at `(x_k, −g_k + σx_k)`.
    pub fenchel_young: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentReport {
    pub per_k: Vec<DescentStep>,
    pub min_margin: f64,
    pub max_fenchel_young: f64,
    /// First record of the checked tail.
    pub tail_start: usize,
}

/// Premises of the potential descent lemmas for scale `b`; each violated
/// inequality is returned as text.
pub fn descent_premises(spec: &ProblemSpec, params: &PotentialParams, b: f64) -> Vec<String> {
    let (s, l) = (params.sigma, params.ell);
    let mut out = Vec::new();
    if 2.0 * b < s + l {
        out.push(format!("2b ≥ σ + l fails: 2·{b} < {s} + {l}"));
    }
    if b < s {
        out.push(format!("b ≥ σ fails: {b} < {s}"));
    }
    match spec.rho() {
        Some(rho) if s < rho => out.push(format!("σ ≥ ρ fails: {s} < {rho}")),
        None => out.push("σ ≥ ρ cannot be checked: ρ is not declared".into()),
        _ => {}
    }
    if let Some(c_b) = params.c_b {
        if l <= c_b * b {
            out.push(format!("l > c_b·b fails: {l} ≤ {c_b}·{b}"));
        }
    }
    out
}

/// `(L_k, F(x_k) + F*(y_k) − ⟨y_k, x_k⟩)` with `y_k = −g_k + σx_k` and
/// `L_k = L(x_{k+1}, y_k, x_k)`, sharing one conjugate evaluation.
fn potential_at(
    spec: &ProblemSpec,
    params: &PotentialParams,
    trace: &[IterationRecord],
    k: usize,
) -> Result<(f64, f64), AnalysisError> {
    let r = &trace[k];
    let y = -&r.g + &r.x * params.sigma;
    let star = conjugate_value(spec, params, &y)?;
    let fy = f_convex(spec, params.sigma, &r.x)? + star - y.dot(&r.x);
    let next = &trace[k + 1].x;
    let l = if linearized_feasible(spec, next, &r.x)? {
        -y.dot(next) + star + 0.5 * params.sigma * next.norm_squared() + 0.5 * params.ell * (next - &r.x).norm_squared()
    } else {
        f64::INFINITY
    };
    Ok((l, fy))
}

/// Potential differences `L_{k−1} − L_k` along the slack-free unit-step tail.
pub fn potential_descent_check(
    trace: &[IterationRecord],
    spec: &ProblemSpec,
    params: &PotentialParams,
) -> Result<DescentReport, AnalysisError> {
    params.validate(spec)?;
    let start = slack_free_start(trace).max(
        trace
            .iter()
            .rposition(|r| r.line_search.is_some() && r.alpha != 1.0)
            .map_or(0, |i| i + 1),
    );
    let usable = trace.len().saturating_sub(1);
    if usable < start + 2 {
        return Err(AnalysisError::EmptyTail);
    }
    let violated: Vec<String> = trace[start..usable]
        .iter()
        .map(b_scale)
        .fold(Vec::new(), |mut acc, b| {
            for v in descent_premises(spec, params, b) {
                if !acc.contains(&v) {
                    acc.push(v);
                }
            }
            acc
        });
    if !violated.is_empty() {
        return Err(AnalysisError::Premise(violated));
    }
    let values: Vec<(f64, f64)> = (start..usable)
        .map(|k| potential_at(spec, params, trace, k))
        .collect::<Result<_, _>>()?;
    let mut per_k = Vec::new();
    for (j, k) in (start + 1..usable).enumerate() {
        let (previous, current) = (values[j].0, values[j + 1].0);
        let difference = previous - current;
        let d_prev = trace[k - 1].d.norm_squared();
        per_k.push(DescentStep {
            k,
            previous,
            current,
            difference,
            c_d: (d_prev > 0.0).then(|| 2.0 * difference / d_prev),
            fenchel_young: values[j + 1].1,
        });
    }
    let min_margin = per_k.iter().map(|s| s.difference).fold(f64::INFINITY, f64::min);
    let max_fenchel_young = per_k.iter().map(|s| s.fenchel_young.abs()).fold(0.0, f64::max);
    Ok(DescentReport {
        per_k,
        min_margin,
        max_fenchel_young,
        tail_start: start,
    })
}

pub fn potential_monitor(report: &DescentReport) -> MonitorResult {
    let margin = (report.min_margin + GRID_ERROR).min(GRID_ERROR - report.max_fenchel_young);
    MonitorResult::new(
        "potential-descent",
        margin,
        format!(
            "{} steps from iteration {}, min L-difference {:e}, max Fenchel–Young residual {:e}",
            report.per_k.len(),
            report.tail_start,
            report.min_margin,
            report.max_fenchel_young
        ),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubgradientBound {
    /// `(−Bd + σd; −d; −ld − Σλ_i∇²c_i(x_k)d)`.
    pub vector: DVector<f64>,
    /// `‖vector‖ / ‖d‖`, zero when `d = 0`.
    pub norm_ratio: f64,
}

/// Subgradient element of `L` built from records `k` and `k+1`, with
/// `d = x_{k+1} − x_k`.
pub fn subgradient_bound_vector(
    spec: &ProblemSpec,
    record_k: &IterationRecord,
    record_k1: &IterationRecord,
    params: &PotentialParams,
) -> Result<SubgradientBound, AnalysisError> {
    let hessians = spec
        .constraint_hessians(&record_k.x)
        .ok_or(AnalysisError::MissingHessians)?;
    let n = spec.n();
    let d = &record_k1.x - &record_k.x;
    let mut curvature = DVector::zeros(n);
    for (h, l) in hessians.iter().zip(record_k.lambda.iter()) {
        curvature += h * &d * *l;
    }
    let mut vector = DVector::zeros(3 * n);
    vector.rows_mut(0, n).copy_from(&(-(&record_k.b * &d) + &d * params.sigma));
    vector.rows_mut(n, n).copy_from(&(-&d));
    vector.rows_mut(2 * n, n).copy_from(&(-&d * params.ell - curvature));
    let dn = d.norm();
    let norm_ratio = if dn > 0.0 { vector.norm() / dn } else { 0.0 };
    Ok(SubgradientBound { vector, norm_ratio })
}

/// `√((σ + ‖B‖)² + 1 + (l + ‖λ‖₁·max‖∇²c‖)²)` over the trace.
pub fn subgradient_ratio_bound(
    spec: &ProblemSpec,
    trace: &[IterationRecord],
    params: &PotentialParams,
) -> Result<f64, AnalysisError> {
    let mut b_norm = 0.0_f64;
    let mut lambda_l1 = 0.0_f64;
    let mut h_norm = 0.0_f64;
    for r in trace {
        b_norm = b_norm.max(r.b.norm());
        lambda_l1 = lambda_l1.max(r.lambda.lp_norm(1));
        let hs = spec.constraint_hessians(&r.x).ok_or(AnalysisError::MissingHessians)?;
        for h in hs {
            h_norm = h_norm.max(h.norm());
        }
    }
    Ok(((params.sigma + b_norm).powi(2) + 1.0 + (params.ell + lambda_l1 * h_norm).powi(2)).sqrt())
}

/// Ratio of the subgradient element along the slack-free tail against its
/// bound.
pub fn subgradient_monitor(
    spec: &ProblemSpec,
    trace: &[IterationRecord],
    params: &PotentialParams,
) -> Result<MonitorResult, AnalysisError> {
    let start = slack_free_start(trace);
    let bound = subgradient_ratio_bound(spec, trace, params)?;
    let mut worst = 0.0_f64;
    for w in trace[start..].windows(2) {
        worst = worst.max(subgradient_bound_vector(spec, &w[0], &w[1], params)?.norm_ratio);
    }
    Ok(MonitorResult::new(
        "subgradient-bound",
        bound - worst,
        format!("max ratio {worst:.6} against bound {bound:.6}"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::{solve, BRule};
    use crate::problem::Bounds;
    use nalgebra::DMatrix;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    fn affine_problem() -> ProblemSpec {
        ProblemSpec::new(Bounds::uniform(2, -2.0, 2.0), |x| (x.norm_squared(), x * 2.0))
            .with_constraints(1, 0, |x| (dv(&[x[0] - x[1] - 0.5]), DMatrix::from_row_slice(1, 2, &[1.0, -1.0])))
            .with_hessians(|_| vec![DMatrix::zeros(2, 2)])
            .with_rho(2.0)
            .with_lip_h(0.0)
    }

    #[test]
    fn affine_subgradient_ratio_has_closed_form() {
        let spec = affine_problem();
        let cfg = SolverConfig {
            b_rule: BRule::Fixed(3.0),
            ..SolverConfig::default()
        };
        let out = solve(&spec, &dv(&[1.0, 1.0]), &cfg).unwrap();
        let params = PotentialParams::new(2.5, 1.5, spec.bounds().clone());
        let sb = subgradient_bound_vector(&spec, &out.trace[0], &out.trace[1], &params).unwrap();
        let expect = ((2.5_f64 - 3.0).powi(2) + 1.0 + 1.5_f64.powi(2)).sqrt();
        assert!((sb.norm_ratio - expect).abs() <= 1e-12);
    }

    #[test]
    fn zero_step_gives_zero_vector() {
        let spec = affine_problem();
        let out = solve(&spec, &dv(&[1.0, 1.0]), &SolverConfig::for_problem(&spec)).unwrap();
        let last = out.final_record().unwrap();
        let params = PotentialParams::new(2.5, 1.5, spec.bounds().clone());
        let sb = subgradient_bound_vector(&spec, last, last, &params).unwrap();
        assert_eq!(sb.norm_ratio, 0.0);
        assert_eq!(sb.vector.amax(), 0.0);
    }

    #[test]
    fn premises_list_violations() {
        let spec = affine_problem();
        let params = PotentialParams::new(3.0, 2.0, spec.bounds().clone());
        assert!(descent_premises(&spec, &params, 4.0).is_empty());
        let v = descent_premises(&spec, &params, 2.2);
        assert_eq!(v.len(), 2);
        assert!(v[0].starts_with("2b ≥ σ + l"));
        assert!(v[1].starts_with("b ≥ σ"));
    }
}
