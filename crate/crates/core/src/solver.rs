//! Dual solvers: the full-gradient baseline, the screened fast path and the
//! audited fast path. All three share one L-BFGS driver, so with identical
//! gradients they follow identical trajectories.

use std::time::{Duration, Instant};

use crate::dual::{recover_plan, BaselinePsi, DualState, PsiEvaluator};
use crate::error::{Error, Result};
use crate::lbfgs::{maximize, MaximizeOptions, Objective, Termination};
use crate::problem::{validate_instance, ProblemInstance, RegParams, TransportPlan};
use crate::screening::{AuditReport, FastPsi, GradStats, ScreeningConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolverMode {
    Baseline,
    Fast,
    /// Fast path with the active set disabled: every block goes through the upper bound.
    FastNoLowerBound,
    /// Fast path with exhaustive safety checks.
    Audit,
}

impl SolverMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolverMode::Baseline => "baseline",
            SolverMode::Fast => "fast",
            SolverMode::FastNoLowerBound => "fast-no-lb",
            SolverMode::Audit => "audit",
        }
    }
}

impl std::str::FromStr for SolverMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "baseline" => Ok(SolverMode::Baseline),
            "fast" => Ok(SolverMode::Fast),
            "fast-no-lb" | "fast_no_lower_bound" => Ok(SolverMode::FastNoLowerBound),
            "audit" => Ok(SolverMode::Audit),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Iterations between snapshot refreshes (and convergence checks).
    pub snapshot_interval: usize,
    /// Infinity-norm threshold on the dual gradient.
    pub grad_tol: f64,
    pub max_outer_loops: usize,
    pub lbfgs_memory: usize,
    pub mode: SolverMode,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { snapshot_interval: 10, grad_tol: 1e-6, max_outer_loops: 200, lbfgs_memory: 10, mode: SolverMode::Fast }
    }
}

impl SolverOptions {
    pub fn with_mode(mut self, mode: SolverMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.snapshot_interval == 0 {
            return Err(Error::InvalidParameter { name: "snapshot_interval", value: 0.0 });
        }
        if !(self.grad_tol > 0.0 && self.grad_tol.is_finite()) {
            return Err(Error::InvalidParameter { name: "grad_tol", value: self.grad_tol });
        }
        if self.max_outer_loops == 0 {
            return Err(Error::InvalidParameter { name: "max_outer_loops", value: 0.0 });
        }
        if self.lbfgs_memory == 0 {
            return Err(Error::InvalidParameter { name: "lbfgs_memory", value: 0.0 });
        }
        Ok(())
    }

    fn maximize_options(&self) -> MaximizeOptions {
        MaximizeOptions {
            chunk: self.snapshot_interval,
            max_chunks: self.max_outer_loops,
            grad_tol: self.grad_tol,
            memory: self.lbfgs_memory,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub state: DualState,
    /// Dual objective at `state`.
    pub objective: f64,
    pub plan: TransportPlan,
    pub stats: GradStats,
    /// Accepted quasi-Newton iterations.
    pub iterations: usize,
    pub wall_time: Duration,
    pub converged: bool,
    pub termination: Termination,
    /// Dual objective at the start and after every accepted iteration.
    pub trace: Vec<f64>,
    /// Size of the active set when the solve stopped (0 for the baseline).
    pub active_set_size: usize,
    /// Infinity norm of the dual gradient at `state`.
    pub grad_norm: f64,
}

enum Route<'a> {
    Baseline(BaselinePsi<'a>),
    Fast(Box<FastPsi<'a>>),
}

struct DualProblem<'a> {
    inst: &'a ProblemInstance,
    route: Route<'a>,
    chunks: u64,
}

impl Objective for DualProblem<'_> {
    fn value_and_gradient(&mut self, x: &[f64], grad: &mut [f64], iteration: usize) -> Result<f64> {
        let m = self.inst.m();
        let (alpha, beta) = x.split_at(m);
        let sums = match &mut self.route {
            Route::Baseline(e) => e.evaluate(alpha, beta, iteration)?,
            Route::Fast(e) => e.evaluate(alpha, beta, iteration)?,
        };
        let (ga, gb) = grad.split_at_mut(m);
        for ((g, a), r) in ga.iter_mut().zip(&self.inst.a).zip(&sums.row) {
            *g = a - r;
        }
        for ((g, b), c) in gb.iter_mut().zip(&self.inst.b).zip(&sums.col) {
            *g = b - c;
        }
        let linear: f64 = alpha.iter().zip(&self.inst.a).map(|(x, y)| x * y).sum::<f64>()
            + beta.iter().zip(&self.inst.b).map(|(x, y)| x * y).sum::<f64>();
        Ok(linear - sums.psi)
    }

    fn end_of_chunk(&mut self, x: &[f64], iteration: usize) -> Result<()> {
        self.chunks += 1;
        if let Route::Fast(e) = &mut self.route {
            e.refresh(&DualState::from_stacked(x, self.inst.m()), iteration)?;
        }
        Ok(())
    }
}

fn run(inst: &ProblemInstance, p: &RegParams, opts: &SolverOptions, route: Route<'_>) -> Result<(Solution, AuditReport)> {
    opts.validate()?;
    validate_instance(inst)?;
    let start = DualState::zeros(inst.m(), inst.n());
    let mut problem = DualProblem { inst, route, chunks: 0 };
    let clock = Instant::now();
    let outcome = maximize(&mut problem, start.stacked(), &opts.maximize_options())?;
    let wall_time = clock.elapsed();

    let (mut stats, audit, active_set_size) = match problem.route {
        Route::Baseline(e) => (e.into_stats(), AuditReport::default(), 0),
        Route::Fast(e) => {
            let size = e.active_set().count();
            let (stats, audit) = e.into_parts();
            (stats, audit, size)
        }
    };
    stats.outer_loops = problem.chunks;

    let state = DualState::from_stacked(&outcome.x, inst.m());
    let plan = recover_plan(&state, inst, p)?;
    let grad_norm = outcome.grad.iter().fold(0.0_f64, |acc, g| acc.max(g.abs()));
    Ok((
        Solution {
            state,
            objective: outcome.value,
            plan,
            stats,
            iterations: outcome.iterations,
            wall_time,
            converged: outcome.converged(),
            termination: outcome.termination,
            trace: outcome.trace,
            active_set_size,
            grad_norm,
        },
        audit,
    ))
}

/// Full gradient evaluation at every iteration.
pub fn solve_baseline(inst: &ProblemInstance, p: &RegParams, opts: &SolverOptions) -> Result<Solution> {
    run(inst, p, opts, Route::Baseline(BaselinePsi::new(inst, *p))).map(|(s, _)| s)
}

/// Screened solve with an explicit screening configuration.
pub fn solve_screened(
    inst: &ProblemInstance,
    p: &RegParams,
    opts: &SolverOptions,
    config: ScreeningConfig,
) -> Result<(Solution, AuditReport)> {
    let start = DualState::zeros(inst.m(), inst.n());
    let fast = FastPsi::new(inst, *p, &start, config)?;
    run(inst, p, opts, Route::Fast(Box::new(fast)))
}

/// Screened solve. `opts.mode == FastNoLowerBound` disables the active set.
pub fn solve_fast(inst: &ProblemInstance, p: &RegParams, opts: &SolverOptions) -> Result<Solution> {
    let config = ScreeningConfig { use_lower_bound: opts.mode != SolverMode::FastNoLowerBound, ..Default::default() };
    solve_screened(inst, p, opts, config).map(|(s, _)| s)
}

/// Screened solve with every skip, inclusion and gradient call verified
/// against exact computation. Fails with [`Error::AuditViolation`] on the
/// first discrepancy. In baseline mode there is nothing to check.
pub fn audit_solve(inst: &ProblemInstance, p: &RegParams, opts: &SolverOptions) -> Result<(Solution, AuditReport)> {
    if opts.mode == SolverMode::Baseline {
        return Ok((solve_baseline(inst, p, opts)?, AuditReport::default()));
    }
    let config = ScreeningConfig {
        use_lower_bound: opts.mode != SolverMode::FastNoLowerBound,
        audit: true,
        upper_bound_shift: 0.0,
    };
    solve_screened(inst, p, opts, config)
}

/// Dispatches on `opts.mode`.
pub fn solve(inst: &ProblemInstance, p: &RegParams, opts: &SolverOptions) -> Result<Solution> {
    match opts.mode {
        SolverMode::Baseline => solve_baseline(inst, p, opts),
        SolverMode::Fast | SolverMode::FastNoLowerBound => solve_fast(inst, p, opts),
        SolverMode::Audit => audit_solve(inst, p, opts).map(|(s, _)| s),
    }
}
