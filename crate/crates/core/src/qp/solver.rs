//! Dense primal-dual interior-point solver for the elastic subproblem.
//!
//! The subproblem is rewritten over `z = (d, v, w, t)` as
//!
//! ```text
//! min ½zᵀHz + hᵀz   s.t.  Az = b,  Gz ≥ e
//! ```
//!
//! and solved with Mehrotra predictor-corrector steps. On exit the active
//! set read off the interior iterate is used for one exact equality-
//! constrained solve; that answer replaces the interior one whenever its
//! residuals are no worse.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use super::subproblem::{recover_slack_multipliers, QpData, QpSolution, SolveStatus};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSolverSettings {
    /// Target for the scaled KKT residual.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Diagonal added to the slack block of the Hessian.
    pub regularization: f64,
}

impl Default for QpSolverSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 200,
            regularization: 1e-12,
        }
    }
}

impl QpSolverSettings {
    pub fn validate(&self) -> Result<(), QpError> {
        if !(self.tolerance > 0.0) || self.max_iterations == 0 || !(self.regularization >= 0.0) {
            return Err(QpError::InvalidSettings);
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("QP solver stalled after {iterations} iterations (residual {residual:e})")]
    Stall {
        iterations: usize,
        residual: f64,
        best: Box<QpSolution>,
    },
    #[error("non-finite arithmetic in the QP solver: {0}")]
    Numerical(&'static str),
    #[error("invalid QP solver settings")]
    InvalidSettings,
}

/// Max-norm KKT residual blocks of a subproblem solution.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QpResiduals {
    /// `g + Bd − Jᵀλ` and the slack stationarity rows.
    pub stationarity: f64,
    /// Elastic rows and slack nonnegativity.
    pub primal: f64,
    /// Complementarity products and dual sign conditions.
    pub complementarity: f64,
}

impl QpResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.complementarity)
    }
}

/// Recomputes the KKT residuals of `sol` from the subproblem data alone.
pub fn residuals(qp: &QpData, sol: &QpSolution) -> QpResiduals {
    let me = qp.eq_count;
    let theta = qp.theta;
    let mut out = QpResiduals {
        stationarity: (&qp.g + &qp.b * &sol.d - qp.jac.transpose() * &sol.lambda).amax(),
        ..QpResiduals::default()
    };
    let lin = qp.linearized(&sol.d);
    for i in 0..me {
        let l = sol.lambda[i];
        out.stationarity = out
            .stationarity
            .max((theta + l - sol.p[i]).abs())
            .max((theta - l - sol.q[i]).abs());
        out.primal = out
            .primal
            .max((lin[i] - sol.v[i] + sol.w[i]).abs())
            .max(-sol.v[i])
            .max(-sol.w[i]);
        out.complementarity = out
            .complementarity
            .max((sol.p[i] * sol.v[i]).abs())
            .max((sol.q[i] * sol.w[i]).abs())
            .max(-sol.p[i])
            .max(-sol.q[i]);
    }
    for k in 0..qp.ineq_count {
        let i = me + k;
        let l = sol.lambda[i];
        let row = lin[i] + sol.t[k];
        out.stationarity = out.stationarity.max((theta - l - sol.r[k]).abs());
        out.primal = out.primal.max(-row).max(-sol.t[k]);
        out.complementarity = out
            .complementarity
            .max((l * row).abs())
            .max((sol.r[k] * sol.t[k]).abs())
            .max(-l)
            .max(-sol.r[k]);
    }
    out
}

/// Solves the elastic subproblem.
pub fn solve_qp(qp: &QpData, settings: &QpSolverSettings) -> Result<QpSolution, QpError> {
    settings.validate()?;
    let dense = DenseQp::from_elastic(qp, settings.regularization);
    let scale = 1.0 + qp.g.amax() + qp.theta;
    let target = settings.tolerance * scale;
    let (state, iterations, converged) = dense.interior_point(qp, target, settings.max_iterations)?;
    let interior_residual = dense.residual(&state);

    let (state, polished) = match dense.polish(&state) {
        Some(p) if dense.residual(&p) <= interior_residual.max(target * 1e-3) => (p, true),
        _ => (state, false),
    };
    let residual = dense.residual(&state);
    let solution = dense.to_solution(
        qp,
        &state,
        SolveStatus {
            iterations,
            polished,
            residual,
        },
    );
    if converged || residual <= target {
        Ok(solution)
    } else {
        Err(QpError::Stall {
            iterations,
            residual,
            best: Box::new(solution),
        })
    }
}

#[derive(Debug, Clone)]
struct IpState {
    z: DVector<f64>,
    y: DVector<f64>,
    u: DVector<f64>,
    s: DVector<f64>,
}

/// Generic dense convex QP in `Az = b, Gz ≥ e` form.
struct DenseQp {
    h: DMatrix<f64>,
    lin: DVector<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    g: DMatrix<f64>,
    e: DVector<f64>,
    n: usize,
    me: usize,
    mi: usize,
}

impl DenseQp {
    /// Variables `(d, v, w, t)`; inequality rows ordered
    /// `[elastic I rows, v ≥ 0, w ≥ 0, t ≥ 0]`.
    fn from_elastic(qp: &QpData, reg: f64) -> Self {
        let n = qp.n();
        let me = qp.eq_count;
        let mi = qp.ineq_count;
        let nz = n + 2 * me + mi;
        let mut h = DMatrix::zeros(nz, nz);
        h.view_mut((0, 0), (n, n)).copy_from(&qp.b);
        for k in n..nz {
            h[(k, k)] = reg;
        }
        let mut lin = DVector::from_element(nz, qp.theta);
        lin.rows_mut(0, n).copy_from(&qp.g);

        let mut a = DMatrix::zeros(me, nz);
        let mut b = DVector::zeros(me);
        for i in 0..me {
            a.view_mut((i, 0), (1, n)).copy_from(&qp.jac.row(i));
            a[(i, n + i)] = -1.0;
            a[(i, n + me + i)] = 1.0;
            b[i] = -qp.c[i];
        }

        let rows = 2 * mi + 2 * me;
        let mut g = DMatrix::zeros(rows, nz);
        let mut e = DVector::zeros(rows);
        for k in 0..mi {
            g.view_mut((k, 0), (1, n)).copy_from(&qp.jac.row(me + k));
            g[(k, n + 2 * me + k)] = 1.0;
            e[k] = -qp.c[me + k];
        }
        for k in 0..(2 * me + mi) {
            g[(mi + k, n + k)] = 1.0;
        }
        Self {
            h,
            lin,
            a,
            b,
            g,
            e,
            n,
            me,
            mi,
        }
    }

    fn initial_state(&self, qp: &QpData) -> IpState {
        let nz = self.h.nrows();
        let mut z = DVector::zeros(nz);
        for i in 0..self.me {
            let start = qp.c[i].abs().max(1.0);
            z[self.n + i] = start;
            z[self.n + self.me + i] = start;
        }
        for k in 0..self.mi {
            z[self.n + 2 * self.me + k] = qp.c[self.me + k].abs().max(1.0);
        }
        let s = (&self.g * &z - &self.e).map(|v| v.max(1.0));
        let u = DVector::from_element(self.g.nrows(), 0.5 * qp.theta);
        IpState {
            z,
            y: DVector::zeros(self.me),
            u,
            s,
        }
    }

    fn dual_residual(&self, st: &IpState) -> DVector<f64> {
        &self.h * &st.z + &self.lin - self.a.transpose() * &st.y - self.g.transpose() * &st.u
    }

    /// Max of all KKT blocks including sign violations of `s` and `u`.
    fn residual(&self, st: &IpState) -> f64 {
        let rd = self.dual_residual(st).amax();
        let rp = if self.me > 0 {
            (&self.a * &st.z - &self.b).amax()
        } else {
            0.0
        };
        let rg = if self.g.nrows() > 0 {
            (&self.g * &st.z - &st.s - &self.e).amax()
        } else {
            0.0
        };
        let comp = st
            .s
            .iter()
            .zip(st.u.iter())
            .fold(0.0_f64, |acc, (s, u)| acc.max((s * u).abs()).max(-s).max(-u));
        rd.max(rp).max(rg).max(comp)
    }

    fn interior_point(
        &self,
        qp: &QpData,
        target: f64,
        max_iterations: usize,
    ) -> Result<(IpState, usize, bool), QpError> {
        let mut st = self.initial_state(qp);
        let mut best = st.clone();
        let mut best_res = self.residual(&st);
        let nineq = self.g.nrows();
        let nz = self.h.nrows();
        let mut iterations = max_iterations;
        for iter in 0..max_iterations {
            let res = self.residual(&st);
            if !res.is_finite() {
                return Err(QpError::Numerical("residual"));
            }
            if res < best_res {
                best_res = res;
                best = st.clone();
            }
            if res <= target {
                return Ok((st, iter, true));
            }
            let rd = self.dual_residual(&st);
            let rp = &self.a * &st.z - &self.b;
            let rg = &self.g * &st.z - &st.s - &self.e;
            let mu = if nineq > 0 { st.s.dot(&st.u) / nineq as f64 } else { 0.0 };

            let wdiag = st.u.component_div(&st.s);
            let mut kmat = self.h.clone();
            if nineq > 0 {
                let gw = DMatrix::from_fn(nineq, nz, |i, j| self.g[(i, j)] * wdiag[i]);
                kmat += self.g.transpose() * gw;
            }
            let dim = nz + self.me;
            let mut m = DMatrix::zeros(dim, dim);
            m.view_mut((0, 0), (nz, nz)).copy_from(&kmat);
            if self.me > 0 {
                m.view_mut((0, nz), (nz, self.me)).copy_from(&(-self.a.transpose()));
                m.view_mut((nz, 0), (self.me, nz)).copy_from(&self.a);
            }
            let lu = m.clone().lu();
            let full = m.full_piv_lu();

            let direction = |rc: &DVector<f64>| -> Option<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> {
                // rc is the right-hand side of U Δs + S Δu = rc.
                let tmp = (rc - st.u.component_mul(&rg)).component_div(&st.s);
                let mut rhs = DVector::zeros(dim);
                rhs.rows_mut(0, nz)
                    .copy_from(&(-&rd + self.g.transpose() * &tmp));
                if self.me > 0 {
                    rhs.rows_mut(nz, self.me).copy_from(&(-&rp));
                }
                let sol = lu.solve(&rhs).or_else(|| full.solve(&rhs))?;
                let dz = sol.rows(0, nz).into_owned();
                let dy = sol.rows(nz, self.me).into_owned();
                let ds = &self.g * &dz + &rg;
                let du = (rc - st.u.component_mul(&ds)).component_div(&st.s);
                Some((dz, dy, ds, du))
            };

            let rc_aff = -st.s.component_mul(&st.u);
            // A singular system this late means the duals have separated
            // by more than machine precision; the best iterate goes to polish.
            let Some((dz_a, dy_a, ds_a, du_a)) = direction(&rc_aff) else {
                iterations = iter;
                break;
            };
            let step_aff = max_step(&st.s, &ds_a).min(max_step(&st.u, &du_a));
            let (dz, dy, ds, du) = if nineq > 0 {
                let s_aff = &st.s + &ds_a * step_aff;
                let u_aff = &st.u + &du_a * step_aff;
                let mu_aff = s_aff.dot(&u_aff) / nineq as f64;
                let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);
                let rc = &rc_aff - ds_a.component_mul(&du_a) + DVector::from_element(nineq, sigma * mu);
                match direction(&rc) {
                    Some(dir) => dir,
                    None => {
                        iterations = iter;
                        break;
                    }
                }
            } else {
                (dz_a, dy_a, ds_a, du_a)
            };
            let alpha = (0.995 * max_step(&st.s, &ds).min(max_step(&st.u, &du))).min(1.0);
            st.z += &dz * alpha;
            st.y += &dy * alpha;
            st.s += &ds * alpha;
            st.u += &du * alpha;
            if st.z.iter().chain(st.u.iter()).chain(st.s.iter()).any(|v| !v.is_finite()) {
                return Err(QpError::Numerical("iterate"));
            }
        }
        let res = self.residual(&st);
        if res < best_res {
            best = st;
            best_res = res;
        }
        Ok((best, iterations, best_res <= target))
    }

    /// Exact solve on the active set suggested by `st` (rows with `s < u`).
    fn polish(&self, st: &IpState) -> Option<IpState> {
        let nz = self.h.nrows();
        let active: Vec<usize> = (0..self.g.nrows()).filter(|&i| st.s[i] < st.u[i]).collect();
        let na = active.len();
        let rows = self.me + na;
        let dim = nz + rows;
        let mut m = DMatrix::zeros(dim, dim);
        m.view_mut((0, 0), (nz, nz)).copy_from(&self.h);
        let mut rhs = DVector::zeros(dim);
        rhs.rows_mut(0, nz).copy_from(&(-&self.lin));
        for i in 0..self.me {
            for j in 0..nz {
                m[(nz + i, j)] = self.a[(i, j)];
                m[(j, nz + i)] = -self.a[(i, j)];
            }
            rhs[nz + i] = self.b[i];
        }
        for (k, &row) in active.iter().enumerate() {
            for j in 0..nz {
                m[(nz + self.me + k, j)] = self.g[(row, j)];
                m[(j, nz + self.me + k)] = -self.g[(row, j)];
            }
            rhs[nz + self.me + k] = self.e[row];
        }
        let lu = m.clone().full_piv_lu();
        let mut sol = lu.solve(&rhs)?;
        for _ in 0..2 {
            let corr = lu.solve(&(&rhs - &m * &sol))?;
            sol += corr;
        }
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let z = sol.rows(0, nz).into_owned();
        let y = sol.rows(nz, self.me).into_owned();
        let mut u = DVector::zeros(self.g.nrows());
        for (k, &row) in active.iter().enumerate() {
            u[row] = sol[nz + self.me + k];
        }
        let mut s = &self.g * &z - &self.e;
        for &row in &active {
            // exact zero on the rows enforced as equalities
            if s[row].abs() < 1e-12 * (1.0 + self.e[row].abs()) {
                s[row] = 0.0;
            }
        }
        Some(IpState { z, y, u, s })
    }

    fn to_solution(&self, qp: &QpData, st: &IpState, status: SolveStatus) -> QpSolution {
        let (n, me, mi) = (self.n, self.me, self.mi);
        let d = st.z.rows(0, n).into_owned();
        let v = st.z.rows(n, me).into_owned();
        let w = st.z.rows(n + me, me).into_owned();
        let t = st.z.rows(n + 2 * me, mi).into_owned();
        let mut lambda = DVector::zeros(me + mi);
        lambda.rows_mut(0, me).copy_from(&st.y);
        lambda.rows_mut(me, mi).copy_from(&st.u.rows(0, mi));
        let (p, q, r) = recover_slack_multipliers(&lambda, qp.theta, me);
        let qp_objective = qp.objective(&d, &v, &w, &t);
        QpSolution {
            d,
            v,
            w,
            t,
            lambda,
            p,
            q,
            r,
            qp_objective,
            status,
        }
    }
}

/// Largest `a ∈ (0, ∞)` keeping `x + a·dx ≥ 0`.
fn max_step(x: &DVector<f64>, dx: &DVector<f64>) -> f64 {
    x.iter()
        .zip(dx.iter())
        .filter(|(_, &d)| d < 0.0)
        .map(|(&xi, &d)| -xi / d)
        .fold(f64::INFINITY, f64::min)
}
