//! Flat `key = value` run configuration.

use std::path::PathBuf;
use std::str::FromStr;

use nalgebra::DVector;
use nsqp::analysis::PotentialParams;
use nsqp::driver::{BRule, SolverConfig};
use nsqp::problem::ProblemSpec;

pub const KEYS: [&str; 22] = [
    "problem",
    "x0",
    "output",
    "eta",
    "tau_alpha",
    "gamma",
    "theta0",
    "alpha_min",
    "eps",
    "eps_c",
    "max_iter",
    "b",
    "b_early",
    "b_switch",
    "bound_tol",
    "qp_tolerance",
    "qp_max_iterations",
    "qp_regularization",
    "sigma",
    "ell",
    "grid_points",
    "refine_spacing",
];

/// Every field is optional; unset fields fall back to the solver defaults.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub problem: Option<String>,
    pub x0: Option<Vec<f64>>,
    pub output: Option<PathBuf>,
    pub eta: Option<f64>,
    pub tau_alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub theta0: Option<f64>,
    pub alpha_min: Option<f64>,
    pub eps: Option<f64>,
    pub eps_c: Option<f64>,
    pub max_iter: Option<usize>,
    pub b: Option<f64>,
    pub b_early: Option<f64>,
    pub b_switch: Option<usize>,
    pub bound_tol: Option<f64>,
    pub qp_tolerance: Option<f64>,
    pub qp_max_iterations: Option<usize>,
    pub qp_regularization: Option<f64>,
    pub sigma: Option<f64>,
    pub ell: Option<f64>,
    pub grid_points: Option<usize>,
    pub refine_spacing: Option<f64>,
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("invalid value for '{key}': '{value}'"))
}

pub fn parse_vector(value: &str) -> Result<Vec<f64>, String> {
    value
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| format!("invalid coordinate '{}'", s.trim())))
        .collect()
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key = value", lineno + 1))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| format!("line {}: {e}", lineno + 1))?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "problem" => self.problem = Some(value.to_string()),
            "x0" => self.x0 = Some(parse_vector(value)?),
            "output" => self.output = Some(PathBuf::from(value)),
            "eta" => self.eta = Some(parse_value(key, value)?),
            "tau_alpha" => self.tau_alpha = Some(parse_value(key, value)?),
            "gamma" => self.gamma = Some(parse_value(key, value)?),
            "theta0" => self.theta0 = Some(parse_value(key, value)?),
            "alpha_min" => self.alpha_min = Some(parse_value(key, value)?),
            "eps" => self.eps = Some(parse_value(key, value)?),
            "eps_c" => self.eps_c = Some(parse_value(key, value)?),
            "max_iter" => self.max_iter = Some(parse_value(key, value)?),
            "b" => self.b = Some(parse_value(key, value)?),
            "b_early" => self.b_early = Some(parse_value(key, value)?),
            "b_switch" => self.b_switch = Some(parse_value(key, value)?),
            "bound_tol" => self.bound_tol = Some(parse_value(key, value)?),
            "qp_tolerance" => self.qp_tolerance = Some(parse_value(key, value)?),
            "qp_max_iterations" => self.qp_max_iterations = Some(parse_value(key, value)?),
            "qp_regularization" => self.qp_regularization = Some(parse_value(key, value)?),
            "sigma" => self.sigma = Some(parse_value(key, value)?),
            "ell" => self.ell = Some(parse_value(key, value)?),
            "grid_points" => self.grid_points = Some(parse_value(key, value)?),
            "refine_spacing" => self.refine_spacing = Some(parse_value(key, value)?),
            _ => return Err(format!("unknown key '{key}' (known: {})", KEYS.join(", "))),
        }
        Ok(())
    }

    /// Fields set in `other` win.
    pub fn overridden_by(self, other: RunConfig) -> RunConfig {
        macro_rules! pick {
            ($($f:ident),*) => { RunConfig { $($f: other.$f.or(self.$f)),* } };
        }
        pick!(
            problem, x0, output, eta, tau_alpha, gamma, theta0, alpha_min, eps, eps_c, max_iter, b, b_early,
            b_switch, bound_tol, qp_tolerance, qp_max_iterations, qp_regularization, sigma, ell, grid_points,
            refine_spacing
        )
    }

    pub fn solver_config(&self, spec: &ProblemSpec) -> Result<SolverConfig, String> {
        let mut cfg = SolverConfig::for_problem(spec);
        macro_rules! apply {
            ($($src:ident => $($dst:ident).+),*) => { $(if let Some(v) = self.$src { cfg.$($dst).+ = v; })* };
        }
        apply!(
            eta => eta,
            tau_alpha => tau_alpha,
            gamma => gamma,
            theta0 => theta0,
            alpha_min => alpha_min,
            eps => eps,
            eps_c => eps_c,
            max_iter => max_iter,
            bound_tol => bound_tol,
            qp_tolerance => qp.tolerance,
            qp_max_iterations => qp.max_iterations,
            qp_regularization => qp.regularization
        );
        let late = self.b.unwrap_or(cfg.b_rule.tail_scale());
        cfg.b_rule = match (self.b_early, self.b_switch) {
            (None, None) => BRule::Fixed(late),
            (Some(early), Some(switch_iter)) => BRule::TwoPhase { early, late, switch_iter },
            _ => return Err("b_early and b_switch must be given together".into()),
        };
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    pub fn start(&self, default: &DVector<f64>) -> Result<DVector<f64>, String> {
        match &self.x0 {
            None => Ok(default.clone()),
            Some(v) if v.len() == default.len() => Ok(DVector::from_column_slice(v)),
            Some(v) => Err(format!("x0 has {} coordinates, the problem has {}", v.len(), default.len())),
        }
    }

    /// `σ = ρ + 1` and `l = min(2b − σ, b)` unless set.
    pub fn potential_params(&self, spec: &ProblemSpec, b: f64) -> PotentialParams {
        let mut params = PotentialParams::defaults(spec, b);
        if let Some(s) = self.sigma {
            params.sigma = s;
            if self.ell.is_none() {
                params.ell = (2.0 * b - s).min(b);
            }
        }
        if let Some(l) = self.ell {
            params.ell = l;
        }
        if let Some(g) = self.grid_points {
            params.grid_points_per_dim = g;
        }
        if let Some(h) = self.refine_spacing {
            params.refine_spacing = h;
        }
        params
    }
}
