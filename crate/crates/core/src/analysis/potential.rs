//! Grid conjugate of `F = −f + ½σ‖·‖²` on a box and the potential `L`.

use nalgebra::DVector;
use rayon::prelude::*;

use super::AnalysisError;
use crate::problem::{Bounds, ProblemSpec};

/// Error budget for every quantity computed through the grid conjugate.
pub const GRID_ERROR: f64 = 1e-4;
/// Tolerance of the linearized-feasibility indicator.
pub const INDICATOR_TOLERANCE: f64 = 1e-8;

const REFINE_POINTS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialParams {
    pub sigma: f64,
    pub ell: f64,
    pub bounds: Bounds,
    /// Coarse grid size per dimension.
    pub grid_points_per_dim: usize,
    /// Final spacing of the local refinement.
    pub refine_spacing: f64,
    /// Constant of the nonlinear-constraint premise `l > c_b·b`.
    pub c_b: Option<f64>,
}

impl PotentialParams {
    /// Coarse grid of 1000 points in 1D and 200 per dimension in 2D.
    pub fn new(sigma: f64, ell: f64, bounds: Bounds) -> Self {
        let grid_points_per_dim = if bounds.dim() <= 1 { 1000 } else { 200 };
        Self {
            sigma,
            ell,
            bounds,
            grid_points_per_dim,
            refine_spacing: 1e-5,
            c_b: None,
        }
    }

    /// `σ = ρ + 1` and `l = min(2b − σ, b)` on the problem's box.
    pub fn defaults(spec: &ProblemSpec, b: f64) -> Self {
        let sigma = spec.rho().unwrap_or(0.0) + 1.0;
        Self::new(sigma, (2.0 * b - sigma).min(b), spec.bounds().clone())
    }

    pub fn validate(&self, spec: &ProblemSpec) -> Result<(), AnalysisError> {
        let n = spec.n();
        if n > 2 {
            return Err(AnalysisError::UnsupportedDimension(n));
        }
        if self.bounds.dim() != n || !self.bounds.is_bounded() {
            return Err(AnalysisError::InvalidParams("the box must be bounded and match the problem dimension".into()));
        }
        if !(self.ell > 0.0) {
            return Err(AnalysisError::InvalidParams(format!("l = {} must be positive", self.ell)));
        }
        if let Some(rho) = spec.rho() {
            if !(self.sigma > rho) {
                return Err(AnalysisError::InvalidParams(format!(
                    "sigma = {} must exceed rho = {rho}",
                    self.sigma
                )));
            }
        }
        if self.grid_points_per_dim < 2 || !(self.refine_spacing > 0.0) {
            return Err(AnalysisError::InvalidParams("grid needs at least 2 points per dimension".into()));
        }
        Ok(())
    }
}

/// `F(x) = −f(x) + ½σ‖x‖²`.
pub fn f_convex(spec: &ProblemSpec, sigma: f64, x: &DVector<f64>) -> Result<f64, AnalysisError> {
    let (f, _) = spec.objective(x)?;
    Ok(-f + 0.5 * sigma * x.norm_squared())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conjugate {
    pub value: f64,
    pub argmax: DVector<f64>,
}

fn lattice(lo: &DVector<f64>, hi: &DVector<f64>, per_dim: usize) -> Vec<DVector<f64>> {
    let n = lo.len();
    let total = per_dim.pow(n as u32);
    (0..total)
        .map(|mut idx| {
            DVector::from_fn(n, |j, _| {
                let i = idx % per_dim;
                idx /= per_dim;
                lo[j] + (hi[j] - lo[j]) * i as f64 / (per_dim - 1) as f64
            })
        })
        .collect()
}

fn best_on(
    spec: &ProblemSpec,
    sigma: f64,
    y: &DVector<f64>,
    points: Vec<DVector<f64>>,
) -> Option<(f64, DVector<f64>)> {
    points
        .into_par_iter()
        .filter_map(|x| {
            let (f, _) = spec.objective(&x).ok()?;
            Some((y.dot(&x) + f - 0.5 * sigma * x.norm_squared(), x))
        })
        .reduce_with(|a, b| if b.0 > a.0 { b } else { a })
}

/// `F*(y) = sup_{x∈D} ⟨y, x⟩ − F(x)` by a coarse grid followed by local
/// zooming around the best point.
pub fn conjugate(spec: &ProblemSpec, params: &PotentialParams, y: &DVector<f64>) -> Result<Conjugate, AnalysisError> {
    params.validate(spec)?;
    let b = &params.bounds;
    let (mut value, mut argmax) = best_on(spec, params.sigma, y, lattice(&b.lower, &b.upper, params.grid_points_per_dim))
        .ok_or(AnalysisError::EmptyGrid)?;
    let mut spacing = (&b.upper - &b.lower) / (params.grid_points_per_dim - 1) as f64;
    while spacing.max() > params.refine_spacing {
        let lo = (&argmax - &spacing * 2.0).sup(&b.lower);
        let hi = (&argmax + &spacing * 2.0).inf(&b.upper);
        if let Some((v, x)) = best_on(spec, params.sigma, y, lattice(&lo, &hi, REFINE_POINTS + 1)) {
            if v > value {
                value = v;
                argmax = x;
            }
        }
        spacing = (&hi - &lo) / REFINE_POINTS as f64;
    }
    Ok(Conjugate { value, argmax })
}

pub fn conjugate_value(spec: &ProblemSpec, params: &PotentialParams, y: &DVector<f64>) -> Result<f64, AnalysisError> {
    conjugate(spec, params, y).map(|c| c.value)
}

/// `F(x) + F*(y) − ⟨y, x⟩`, nonnegative up to the grid error and zero
/// exactly when `y ∈ ∂F(x)`.
pub fn fenchel_young_residual(
    spec: &ProblemSpec,
    params: &PotentialParams,
    x: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<f64, AnalysisError> {
    Ok(f_convex(spec, params.sigma, x)? + conjugate_value(spec, params, y)? - y.dot(x))
}

/// Whether `x` satisfies the constraints linearized at `w`.
pub fn linearized_feasible(spec: &ProblemSpec, x: &DVector<f64>, w: &DVector<f64>) -> Result<bool, AnalysisError> {
    let (c, jac) = spec.constraints(w)?;
    let lin = c + jac * (x - w);
    let me = spec.eq_count();
    Ok(lin.iter().enumerate().all(|(i, &v)| {
        if i < me {
            v.abs() <= INDICATOR_TOLERANCE
        } else {
            v >= -INDICATOR_TOLERANCE
        }
    }))
}

/// `L(x, y, w) = −yᵀx + F*(y) + ½σ‖x‖² + ½l‖x − w‖²`, or `+∞` when `x`
/// violates the constraints linearized at `w`.
pub fn potential_value(
    spec: &ProblemSpec,
    params: &PotentialParams,
    x: &DVector<f64>,
    y: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<f64, AnalysisError> {
    params.validate(spec)?;
    if !linearized_feasible(spec, x, w)? {
        return Ok(f64::INFINITY);
    }
    Ok(-y.dot(x)
        + conjugate_value(spec, params, y)?
        + 0.5 * params.sigma * x.norm_squared()
        + 0.5 * params.ell * (x - w).norm_squared())
}
