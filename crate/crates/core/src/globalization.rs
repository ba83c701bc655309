//! ℓ1 exact-penalty merit, backtracking line search and penalty update.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::problem::{ProblemError, ProblemSpec};

pub const DEFAULT_ETA: f64 = 0.1;
pub const DEFAULT_TAU_ALPHA: f64 = 0.5;
pub const DEFAULT_GAMMA: f64 = 1e-2;
pub const DEFAULT_ALPHA_MIN: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LineSearchError {
    #[error("line search failed: no step above alpha_min = {alpha_min:e} after {trials} trials")]
    Failure { trials: usize, alpha_min: f64 },
    #[error("merit evaluation failed at the base point: {0}")]
    Oracle(#[from] ProblemError),
    #[error("invalid line search parameters: {0}")]
    InvalidParameters(&'static str),
}

/// Line-search parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchParams {
    pub eta: f64,
    pub tau_alpha: f64,
    pub alpha_min: f64,
}

impl Default for LineSearchParams {
    fn default() -> Self {
        Self {
            eta: DEFAULT_ETA,
            tau_alpha: DEFAULT_TAU_ALPHA,
            alpha_min: DEFAULT_ALPHA_MIN,
        }
    }
}

impl LineSearchParams {
    pub fn validate(&self) -> Result<(), LineSearchError> {
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(LineSearchError::InvalidParameters("eta must lie in (0, 1)"));
        }
        if !(self.tau_alpha > 0.0 && self.tau_alpha < 1.0) {
            return Err(LineSearchError::InvalidParameters("tau_alpha must lie in (0, 1)"));
        }
        if !(self.alpha_min > 0.0 && self.alpha_min <= 1.0) {
            return Err(LineSearchError::InvalidParameters("alpha_min must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineSearchOutcome {
    /// Accepted step, `tau_alpha^trials`.
    pub alpha: f64,
    /// Number of rejected trials before acceptance.
    pub trials: usize,
    pub base_merit: f64,
    pub trial_merit: f64,
    /// `base_merit − trial_merit`.
    pub achieved_decrease: f64,
    /// `½ dᵀBd`.
    pub model_decrease: f64,
}

/// `f(x) + θ·v(x)`.
pub fn merit(spec: &ProblemSpec, x: &DVector<f64>, theta: f64) -> Result<f64, ProblemError> {
    let (f, _) = spec.objective(x)?;
    let (c, _) = spec.constraints(x)?;
    Ok(f + theta * spec.constraint_violation(&c))
}

/// Merit at a trial point, `None` when the point leaves the box or an
/// oracle fails.
fn trial_merit(spec: &ProblemSpec, x: &DVector<f64>, theta: f64) -> Option<f64> {
    if !spec.bounds().contains(x) {
        return None;
    }
    merit(spec, x, theta).ok().filter(|m| m.is_finite())
}

/// Backtracks `α ∈ {1, τ, τ², …}` until
/// `φ(x) − φ(x + αd) ≥ η·α·½dᵀBd`.
pub fn line_search(
    spec: &ProblemSpec,
    x: &DVector<f64>,
    d: &DVector<f64>,
    theta: f64,
    b: &DMatrix<f64>,
    params: &LineSearchParams,
) -> Result<LineSearchOutcome, LineSearchError> {
    params.validate()?;
    let base_merit = merit(spec, x, theta)?;
    let model_decrease = 0.5 * d.dot(&(b * d));
    let mut alpha = 1.0;
    let mut trials = 0;
    while alpha >= params.alpha_min {
        let trial = x + d * alpha;
        if let Some(m) = trial_merit(spec, &trial, theta) {
            let achieved = base_merit - m;
            if achieved >= params.eta * alpha * model_decrease {
                return Ok(LineSearchOutcome {
                    alpha,
                    trials,
                    base_merit,
                    trial_merit: m,
                    achieved_decrease: achieved,
                    model_decrease,
                });
            }
        }
        alpha *= params.tau_alpha;
        trials += 1;
    }
    Err(LineSearchError::Failure {
        trials,
        alpha_min: params.alpha_min,
    })
}

/// `max(θ, ‖λ‖_∞ + γ)`.
pub fn update_penalty(theta: f64, lambda: &DVector<f64>, gamma: f64) -> f64 {
    theta.max(lambda.amax() + gamma)
}

/// Smallest step the backtracking can return once θ is constant:
/// `τ^max(0, ⌈log_τ(b / (ρ + θ·m·H))⌉)`.
pub fn step_size_lower_bound(tau_alpha: f64, b: f64, rho: f64, theta: f64, m: usize, lip_h: f64) -> f64 {
    let curvature = rho + theta * m as f64 * lip_h;
    if curvature <= b {
        return 1.0;
    }
    let j = ((b / curvature).ln() / tau_alpha.ln()).ceil().max(0.0);
    tau_alpha.powf(j)
}
