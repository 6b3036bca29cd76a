//! Group-sparse regularized optimal transport solved in the smooth dual, with
//! safe skipping of gradient blocks that are provably zero.
//!
//! The fast solver ([`solve_fast`]) returns the same iterates, objective and
//! plan as the full-gradient baseline ([`solve_baseline`]); [`audit_solve`]
//! checks that claim exhaustively during a run.

pub mod data;
pub mod dual;
pub mod error;
pub mod lbfgs;
pub mod matrix;
pub mod problem;
pub mod regularizer;
pub mod screening;
pub mod solver;

pub use dual::{
    dual_gradient, dual_objective, dual_value_and_gradient, plan_diagnostics, recover_plan, BaselinePsi, DualState,
    PlanDiagnostics, PsiEvaluator, PsiSums,
};
pub use error::{AuditViolation, Error, Result, Side, ViolationKind};
pub use matrix::ColMatrix;
pub use problem::{
    params_from_rho, primal_objective, validate_instance, GroupPartition, ProblemInstance, RegParams, TransportPlan,
};
pub use regularizer::{grad_psi_block, grad_psi_full, psi_value, GradBlockResult};
pub use screening::{
    build_active_set, fast_grad_psi, lower_bound, take_snapshot, upper_bound, ActiveSet, AuditReport, BoundDeltas,
    CallStats, FastPsi, GradStats, ScreeningConfig, SnapshotStore,
};
pub use solver::{audit_solve, solve, solve_baseline, solve_fast, solve_screened, Solution, SolverMode, SolverOptions};
