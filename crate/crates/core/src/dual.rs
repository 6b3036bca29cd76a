//! Smooth relaxed dual: objective, gradient and plan recovery.
//!
//! The dual is `max a.alpha + b.beta - sum_j psi(alpha + beta_j 1 - c_j)`. Its
//! gradient only needs, per column, the conjugate gradient `g_j`:
//! `d/d alpha = a - sum_j g_j` and `d/d beta_j = b_j - 1.g_j`.
//!
//! Columns are processed in fixed chunks of [`COLUMN_CHUNK`]; partial sums are
//! combined in chunk order, so results do not depend on the thread count and
//! every [`PsiEvaluator`] built on [`sweep_columns`] reduces in the same order.

use std::ops::Range;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::ColMatrix;
use crate::problem::{GroupPartition, ProblemInstance, RegParams, TransportPlan};
use crate::regularizer::threshold_in_place;
use crate::screening::{CallStats, GradStats};

/// Columns per reduction chunk.
pub const COLUMN_CHUNK: usize = 32;

/// Dual variables `alpha` (source) and `beta` (target).
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl DualState {
    pub fn zeros(m: usize, n: usize) -> Self {
        Self { alpha: vec![0.0; m], beta: vec![0.0; n] }
    }

    /// Splits a stacked `[alpha; beta]` vector.
    pub fn from_stacked(x: &[f64], m: usize) -> Self {
        Self { alpha: x[..m].to_vec(), beta: x[m..].to_vec() }
    }

    pub fn stacked(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.alpha.len() + self.beta.len());
        x.extend_from_slice(&self.alpha);
        x.extend_from_slice(&self.beta);
        x
    }

    pub(crate) fn check(&self, inst: &ProblemInstance) -> Result<()> {
        if self.alpha.len() != inst.m() {
            return Err(Error::DimensionMismatch { what: "alpha", expected: inst.m(), found: self.alpha.len() });
        }
        if self.beta.len() != inst.n() {
            return Err(Error::DimensionMismatch { what: "beta", expected: inst.n(), found: self.beta.len() });
        }
        Ok(())
    }
}

/// Aggregates of one pass over all columns.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiSums {
    /// `sum_j psi(f_j)`.
    pub psi: f64,
    /// `sum_j g_j`, length `m`.
    pub row: Vec<f64>,
    /// `1.g_j` per column, length `n`.
    pub col: Vec<f64>,
}

/// Anything able to produce the conjugate terms of the dual at a given point.
pub trait PsiEvaluator {
    fn evaluate(&mut self, alpha: &[f64], beta: &[f64], iteration: usize) -> Result<PsiSums>;

    fn stats(&self) -> &GradStats;
}

/// Per-chunk accumulator handed to column callbacks.
pub struct ChunkAcc {
    psi: f64,
    row: Vec<f64>,
    col: Vec<f64>,
    scratch: Vec<f64>,
    col_psi: f64,
    col_mass: f64,
}

impl ChunkAcc {
    fn new(m: usize, max_group: usize, cols: usize) -> Self {
        Self {
            psi: 0.0,
            row: vec![0.0; m],
            col: Vec::with_capacity(cols),
            scratch: vec![0.0; max_group],
            col_psi: 0.0,
            col_mass: 0.0,
        }
    }

    /// Computes one gradient block exactly and folds it into the sums.
    ///
    /// Returns `(z, nonzero)`.
    #[inline]
    pub fn block(&mut self, alpha: &[f64], beta_j: f64, cost: &[f64], rows: Range<usize>, p: &RegParams) -> (f64, bool) {
        let start = rows.start;
        let buf = &mut self.scratch[..rows.len()];
        for ((f, &a), &c) in buf.iter_mut().zip(&alpha[rows.clone()]).zip(&cost[rows]) {
            *f = a + beta_j - c;
        }
        match threshold_in_place(buf, p) {
            (z, Some(contribution)) => {
                self.col_psi += contribution;
                for (r, &g) in self.row[start..].iter_mut().zip(buf.iter()) {
                    *r += g;
                    self.col_mass += g;
                }
                (z, true)
            }
            (z, None) => (z, false),
        }
    }

    #[inline]
    fn end_column(&mut self) {
        self.psi += self.col_psi;
        self.col.push(self.col_mass);
        self.col_psi = 0.0;
        self.col_mass = 0.0;
    }
}

/// Runs `column` for every target index in deterministic chunks.
///
/// `column(j, acc, extra)` must call [`ChunkAcc::block`] for every block it
/// wants counted; blocks it omits are taken to be zero. Each chunk owns one
/// `extra` value created by `init`, returned in chunk order.
pub fn sweep_columns<S, I, F>(inst: &ProblemInstance, init: I, column: F) -> Result<(PsiSums, Vec<S>)>
where
    S: Send,
    I: Fn() -> S + Sync,
    F: Fn(usize, &mut ChunkAcc, &mut S) -> Result<()> + Sync,
{
    let (m, n) = (inst.m(), inst.n());
    let max_group = inst.groups.max_size();
    let chunks: Vec<Range<usize>> = (0..n).step_by(COLUMN_CHUNK).map(|s| s..(s + COLUMN_CHUNK).min(n)).collect();
    let partials: Vec<Result<(ChunkAcc, S)>> = chunks
        .into_par_iter()
        .map(|cols| {
            let mut acc = ChunkAcc::new(m, max_group, cols.len());
            let mut extra = init();
            for j in cols {
                column(j, &mut acc, &mut extra)?;
                acc.end_column();
            }
            Ok((acc, extra))
        })
        .collect();

    let mut sums = PsiSums { psi: 0.0, row: vec![0.0; m], col: Vec::with_capacity(n) };
    let mut extras = Vec::with_capacity(partials.len());
    for partial in partials {
        let (acc, extra) = partial?;
        sums.psi += acc.psi;
        for (r, v) in sums.row.iter_mut().zip(&acc.row) {
            *r += v;
        }
        sums.col.extend_from_slice(&acc.col);
        extras.push(extra);
    }
    Ok((sums, extras))
}

/// Evaluates every block of every column.
pub struct BaselinePsi<'a> {
    inst: &'a ProblemInstance,
    params: RegParams,
    stats: GradStats,
}

impl<'a> BaselinePsi<'a> {
    pub fn new(inst: &'a ProblemInstance, params: RegParams) -> Self {
        Self { inst, params, stats: GradStats::default() }
    }

    pub fn into_stats(self) -> GradStats {
        self.stats
    }
}

impl PsiEvaluator for BaselinePsi<'_> {
    fn evaluate(&mut self, alpha: &[f64], beta: &[f64], iteration: usize) -> Result<PsiSums> {
        let (inst, p) = (self.inst, &self.params);
        let (sums, _) = sweep_columns(inst, || (), |j, acc, _| {
            let cost = inst.cost.col(j);
            for rows in inst.groups.ranges() {
                acc.block(alpha, beta[j], cost, rows, p);
            }
            Ok(())
        })?;
        // Every block is computed unconditionally, as if all pairs were active.
        let blocks = (inst.num_groups() * inst.n()) as u64;
        self.stats.record(CallStats { iteration, in_active: blocks, ..Default::default() });
        Ok(sums)
    }

    fn stats(&self) -> &GradStats {
        &self.stats
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Dual value and gradient at `state` using `eval` for the conjugate terms.
pub fn dual_value_and_gradient(
    state: &DualState,
    inst: &ProblemInstance,
    eval: &mut dyn PsiEvaluator,
    iteration: usize,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    state.check(inst)?;
    let sums = eval.evaluate(&state.alpha, &state.beta, iteration)?;
    let value = dot(&state.alpha, &inst.a) + dot(&state.beta, &inst.b) - sums.psi;
    let ga = inst.a.iter().zip(&sums.row).map(|(a, r)| a - r).collect();
    let gb = inst.b.iter().zip(&sums.col).map(|(b, c)| b - c).collect();
    Ok((value, ga, gb))
}

pub fn dual_objective(state: &DualState, inst: &ProblemInstance, p: &RegParams) -> Result<f64> {
    let mut eval = BaselinePsi::new(inst, *p);
    Ok(dual_value_and_gradient(state, inst, &mut eval, 0)?.0)
}

/// `(d/d alpha, d/d beta)` of the dual objective.
pub fn dual_gradient(
    state: &DualState,
    inst: &ProblemInstance,
    eval: &mut dyn PsiEvaluator,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (_, ga, gb) = dual_value_and_gradient(state, inst, eval, 0)?;
    Ok((ga, gb))
}

/// `t_j = grad psi(alpha + beta_j 1 - c_j)` for every column.
pub fn recover_plan(state: &DualState, inst: &ProblemInstance, p: &RegParams) -> Result<TransportPlan> {
    state.check(inst)?;
    let (m, n) = (inst.m(), inst.n());
    let mut plan = ColMatrix::zeros(m, n);
    plan.as_mut_slice().par_chunks_mut(m.max(1)).enumerate().for_each(|(j, out)| {
        let cost = inst.cost.col(j);
        for rows in inst.groups.ranges() {
            let block = &mut out[rows.clone()];
            for ((f, &a), &c) in block.iter_mut().zip(&state.alpha[rows.clone()]).zip(&cost[rows]) {
                *f = a + state.beta[j] - c;
            }
            if threshold_in_place(block, p).1.is_none() {
                block.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    });
    Ok(TransportPlan { plan })
}

/// Summary of how far a plan is from the transport polytope, and how sparse it is.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanDiagnostics {
    /// `|T 1 - a|_inf`.
    pub marginal_res_a: f64,
    /// `|T^T 1 - b|_inf`.
    pub marginal_res_b: f64,
    /// Fraction of (group, column) blocks that are entirely zero.
    pub group_sparsity: f64,
    pub mass: f64,
}

pub fn plan_diagnostics(t: &TransportPlan, inst: &ProblemInstance) -> Result<PlanDiagnostics> {
    let (m, n) = (inst.m(), inst.n());
    if t.plan.rows() != m || t.plan.cols() != n {
        return Err(Error::DimensionMismatch {
            what: "transport plan",
            expected: m * n,
            found: t.plan.rows() * t.plan.cols(),
        });
    }
    let mut row_sums = vec![0.0; m];
    let mut res_b: f64 = 0.0;
    let mut zero_blocks = 0usize;
    for j in 0..n {
        let col = t.plan.col(j);
        for (r, v) in row_sums.iter_mut().zip(col) {
            *r += v;
        }
        res_b = res_b.max((col.iter().sum::<f64>() - inst.b[j]).abs());
        zero_blocks += count_zero_blocks(col, &inst.groups);
    }
    let res_a = row_sums.iter().zip(&inst.a).fold(0.0_f64, |acc, (r, a)| acc.max((r - a).abs()));
    Ok(PlanDiagnostics {
        marginal_res_a: res_a,
        marginal_res_b: res_b,
        group_sparsity: zero_blocks as f64 / (inst.num_groups() * n) as f64,
        mass: row_sums.iter().sum(),
    })
}

fn count_zero_blocks(col: &[f64], groups: &GroupPartition) -> usize {
    groups.ranges().filter(|r| col[r.clone()].iter().all(|v| *v == 0.0)).count()
}
