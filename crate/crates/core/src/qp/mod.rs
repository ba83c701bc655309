//! Elastic QP subproblem: data, solution, classification and solver.

mod solver;
mod subproblem;

pub use solver::{residuals, solve_qp, QpError, QpResiduals, QpSolverSettings};
pub use subproblem::{
    check_multiplier_bounds, classification_tolerance, classify, recover_slack_multipliers,
    AssemblyError, BoundRule, BoundViolation, ConstraintClassification, MultiplierBoundReport,
    QpData, QpSolution, SolveStatus,
};
