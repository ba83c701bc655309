//! Diagnostics: potential function, trace monitors, MFCQ and rate fitting.

mod mfcq;
mod monitors;
mod potential;
mod rate;

use thiserror::Error;

use crate::problem::ProblemError;
use crate::qp::{AssemblyError, QpError};

pub use mfcq::{check_mfcq, MfcqReport};
pub use monitors::{
    descent_premises, full_step, line_search_contract, merit_telescoping, multiplier_bounds,
    potential_descent_check, potential_monitor, slack_free_start, slack_tail, step_size_bound,
    step_vanishing, subgradient_bound_vector, subgradient_monitor, subgradient_ratio_bound,
    theta_tail, DescentReport, DescentStep, MonitorResult, SubgradientBound, DECREASE_SLACK,
    SLACK_ZERO,
};
pub use potential::{
    conjugate, conjugate_value, f_convex, fenchel_young_residual, linearized_feasible,
    potential_value, Conjugate, PotentialParams, GRID_ERROR, INDICATOR_TOLERANCE,
};
pub use rate::{errors_to_last, fit_linear_rate, fit_rate_points, fit_trace_rate, RateFit};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("grid conjugate supports n <= 2, got n = {0}")]
    UnsupportedDimension(usize),
    #[error("invalid potential parameters: {0}")]
    InvalidParams(String),
    #[error("lemma premises violated: {}", .0.join("; "))]
    Premise(Vec<String>),
    #[error("constraint Hessians are required but the problem provides none")]
    MissingHessians,
    #[error("the problem does not declare {0}")]
    MissingConstant(&'static str),
    #[error("rate fit needs at least 3 points, got {0}")]
    InsufficientData(usize),
    #[error("error sequence entry {0} is not strictly positive")]
    NonPositiveError(usize),
    #[error("the trace has no usable tail")]
    EmptyTail,
    #[error("no grid point could be evaluated")]
    EmptyGrid,
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
}
