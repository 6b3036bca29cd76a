//! One CSV row per solver run.

use std::io::Write;

use gsot_core::{plan_diagnostics, CallStats, ProblemInstance, Result, Solution, SolverMode};

pub const HEADER: [&str; 19] = [
    "mode",
    "num_classes",
    "per_class",
    "m",
    "n",
    "gamma",
    "rho",
    "iterations",
    "outer_loops",
    "wall_ms",
    "objective",
    "blocks_computed",
    "blocks_skipped",
    "upper_bounds_evaluated",
    "active_set_size_final",
    "group_sparsity",
    "marginal_res_a",
    "marginal_res_b",
    "converged",
];

pub const HISTORY_HEADER: [&str; 9] =
    ["mode", "gamma", "rho", "call", "iteration", "in_active", "skipped", "unskipped", "upper_bounds"];

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub mode: SolverMode,
    pub num_classes: usize,
    /// `None` when groups differ in size.
    pub per_class: Option<usize>,
    pub m: usize,
    pub n: usize,
    pub gamma: f64,
    pub rho: f64,
    pub iterations: usize,
    pub outer_loops: u64,
    pub wall_ms: f64,
    pub objective: f64,
    pub blocks_computed: u64,
    pub blocks_skipped: u64,
    pub upper_bounds_evaluated: u64,
    pub active_set_size_final: usize,
    pub group_sparsity: f64,
    pub marginal_res_a: f64,
    pub marginal_res_b: f64,
    pub converged: bool,
}

/// Shortest representation that parses back to the same bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

impl BenchRecord {
    pub fn new(inst: &ProblemInstance, mode: SolverMode, gamma: f64, rho: f64, sol: &Solution) -> Result<Self> {
        let diag = plan_diagnostics(&sol.plan, inst)?;
        let groups = &inst.groups;
        let first = groups.size(0);
        let uniform = (0..groups.len()).all(|l| groups.size(l) == first);
        Ok(Self {
            mode,
            num_classes: groups.len(),
            per_class: uniform.then_some(first),
            m: inst.m(),
            n: inst.n(),
            gamma,
            rho,
            iterations: sol.iterations,
            outer_loops: sol.stats.outer_loops,
            wall_ms: sol.wall_time.as_secs_f64() * 1e3,
            objective: sol.objective,
            blocks_computed: sol.stats.blocks_computed(),
            blocks_skipped: sol.stats.blocks_skipped,
            upper_bounds_evaluated: sol.stats.upper_bounds_evaluated,
            active_set_size_final: sol.active_set_size,
            group_sparsity: diag.group_sparsity,
            marginal_res_a: diag.marginal_res_a,
            marginal_res_b: diag.marginal_res_b,
            converged: sol.converged,
        })
    }

    pub fn fields(&self) -> Vec<String> {
        vec![
            self.mode.as_str().to_string(),
            self.num_classes.to_string(),
            self.per_class.map(|g| g.to_string()).unwrap_or_default(),
            self.m.to_string(),
            self.n.to_string(),
            fmt_f64(self.gamma),
            fmt_f64(self.rho),
            self.iterations.to_string(),
            self.outer_loops.to_string(),
            fmt_f64(self.wall_ms),
            fmt_f64(self.objective),
            self.blocks_computed.to_string(),
            self.blocks_skipped.to_string(),
            self.upper_bounds_evaluated.to_string(),
            self.active_set_size_final.to_string(),
            fmt_f64(self.group_sparsity),
            fmt_f64(self.marginal_res_a),
            fmt_f64(self.marginal_res_b),
            self.converged.to_string(),
        ]
    }
}

pub fn write_records<W: Write>(out: W, records: &[BenchRecord]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER)?;
    for r in records {
        w.write_record(r.fields())?;
    }
    w.flush()?;
    Ok(())
}

/// Per-call screening counters of one run, keyed by its grid point.
pub fn write_history<W: Write>(
    w: &mut csv::Writer<W>,
    mode: SolverMode,
    gamma: f64,
    rho: f64,
    history: &[CallStats],
) -> csv::Result<()> {
    for (call, c) in history.iter().enumerate() {
        w.write_record([
            mode.as_str().to_string(),
            fmt_f64(gamma),
            fmt_f64(rho),
            call.to_string(),
            c.iteration.to_string(),
            c.in_active.to_string(),
            c.skipped.to_string(),
            c.unskipped.to_string(),
            c.upper_bounds.to_string(),
        ])?;
    }
    Ok(())
}
