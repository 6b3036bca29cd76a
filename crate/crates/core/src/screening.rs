//! Safe gradient skipping for the group-sparse dual.
//!
//! A block `(l, j)` of the conjugate gradient is zero iff `z_{l,j} <= mu*gamma`,
//! where `z_{l,j} = |[(alpha + beta_j 1 - c_j)_l]_+|_2`. Computing `z` costs
//! `O(g_l)`; the bounds below cost `O(1)` per block once the per-group delta
//! norms against a stored snapshot are known:
//!
//! ```text
//! upper = z~ + |[da_l]_+| + sqrt(g_l) [db_j]_+
//! lower = k~ - |da_l| - sqrt(g_l) |db_j| - o~ - |[da_l]_-| - sqrt(g_l) [db_j]_-
//! ```
//!
//! with `z~`, `k~`, `o~` the positive-part, full and negative-part norms of the
//! residual block at the snapshot. A block is skipped when `upper <= tau` and
//! joins the active set (computed without a bound check) when `lower > tau`.
//!
//! Both bounds are widened by a rounding allowance so they also enclose the
//! floating-point `z` that the gradient kernel thresholds. Blocks that did not
//! move since the snapshot get no allowance where none is needed, so the upper
//! bound is then exactly `z~`.

use rayon::prelude::*;

use crate::dual::{sweep_columns, DualState, PsiEvaluator, PsiSums};
use crate::error::{AuditViolation, Error, Result, ViolationKind};
use crate::matrix::ColMatrix;
use crate::problem::{GroupPartition, ProblemInstance, RegParams};
use crate::regularizer::{positive_norm, threshold_in_place};

/// Dual variables and residual-block norms recorded at one iterate.
///
/// The three matrices are `|L| x n`, one contiguous column per target.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotStore {
    pub alpha_snap: Vec<f64>,
    pub beta_snap: Vec<f64>,
    /// `|[f_l]_+|_2`.
    pub z_snap: ColMatrix,
    /// `|f_l|_2`.
    pub k_snap: ColMatrix,
    /// `|[f_l]_-|_2`.
    pub o_snap: ColMatrix,
    pub stamp: usize,
    /// `max|alpha~| + max|beta~| + max|C|`, an entrywise bound on the residuals.
    pub scale: f64,
}

fn residual_block(out: &mut [f64], alpha: &[f64], beta_j: f64, cost: &[f64]) {
    for ((f, &a), &c) in out.iter_mut().zip(alpha).zip(cost) {
        *f = a + beta_j - c;
    }
}

/// Exact `z_{l,j}` at `state`.
pub fn exact_z(state: &DualState, inst: &ProblemInstance, l: usize, j: usize) -> f64 {
    let rows = inst.groups.range(l);
    let mut buf = vec![0.0; rows.len()];
    residual_block(&mut buf, &state.alpha[rows.clone()], state.beta[j], &inst.cost.col(j)[rows]);
    positive_norm(&buf)
}

/// Records `state` and the three norms of every residual block.
pub fn take_snapshot(state: &DualState, inst: &ProblemInstance, stamp: usize) -> Result<SnapshotStore> {
    state.check(inst)?;
    let (nl, n) = (inst.num_groups(), inst.n());
    let mut z_snap = ColMatrix::zeros(nl, n);
    let mut k_snap = ColMatrix::zeros(nl, n);
    let mut o_snap = ColMatrix::zeros(nl, n);
    let max_group = inst.groups.max_size();
    z_snap
        .as_mut_slice()
        .par_chunks_mut(nl)
        .zip(k_snap.as_mut_slice().par_chunks_mut(nl))
        .zip(o_snap.as_mut_slice().par_chunks_mut(nl))
        .enumerate()
        .for_each_init(
            || vec![0.0; max_group],
            |buf, (j, ((zc, kc), oc))| {
                let cost = inst.cost.col(j);
                for (l, rows) in inst.groups.ranges().enumerate() {
                    let f = &mut buf[..rows.len()];
                    residual_block(f, &state.alpha[rows.clone()], state.beta[j], &cost[rows]);
                    zc[l] = positive_norm(f);
                    kc[l] = f.iter().map(|v| v * v).sum::<f64>().sqrt();
                    oc[l] = f.iter().map(|v| (-v).max(0.0).powi(2)).sum::<f64>().sqrt();
                }
            },
        );
    Ok(SnapshotStore {
        alpha_snap: state.alpha.clone(),
        beta_snap: state.beta.clone(),
        z_snap,
        k_snap,
        o_snap,
        stamp,
        scale: max_abs(&state.alpha) + max_abs(&state.beta) + inst.cost.max_abs(),
    })
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Per-group and per-column differences between the current iterate and a
/// snapshot, computed once per gradient call or active-set build.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundDeltas {
    /// `|[da_l]_+|_2`.
    pub alpha_pos: Vec<f64>,
    /// `|da_l|_2`.
    pub alpha_norm: Vec<f64>,
    /// `|[da_l]_-|_2`.
    pub alpha_neg: Vec<f64>,
    /// `db_j`.
    pub beta: Vec<f64>,
    pub sqrt_g: Vec<f64>,
    /// Relative rounding allowance per group.
    pub rel_slack: Vec<f64>,
    /// Absolute rounding allowance per group, from residual-entry errors at
    /// both the snapshot and the current iterate.
    pub abs_slack: Vec<f64>,
}

impl BoundDeltas {
    pub fn new(alpha: &[f64], beta: &[f64], snap: &SnapshotStore, groups: &GroupPartition) -> Self {
        let nl = groups.len();
        let mut alpha_pos = Vec::with_capacity(nl);
        let mut alpha_norm = Vec::with_capacity(nl);
        let mut alpha_neg = Vec::with_capacity(nl);
        for rows in groups.ranges() {
            let (mut pos, mut all, mut neg) = (0.0, 0.0, 0.0);
            for (a, s) in alpha[rows.clone()].iter().zip(&snap.alpha_snap[rows]) {
                let d = a - s;
                all += d * d;
                if d > 0.0 {
                    pos += d * d;
                } else {
                    neg += d * d;
                }
            }
            alpha_pos.push(pos.sqrt());
            alpha_norm.push(all.sqrt());
            alpha_neg.push(neg.sqrt());
        }
        let sqrt_g: Vec<f64> = (0..nl).map(|l| (groups.size(l) as f64).sqrt()).collect();
        let scale = snap.scale + max_abs(alpha) + max_abs(beta);
        Self {
            alpha_pos,
            alpha_norm,
            alpha_neg,
            beta: beta.iter().zip(&snap.beta_snap).map(|(b, s)| b - s).collect(),
            rel_slack: (0..nl).map(|l| (groups.size(l) + 8) as f64 * f64::EPSILON).collect(),
            abs_slack: sqrt_g.iter().map(|sg| 4.0 * f64::EPSILON * sg * scale).collect(),
            sqrt_g,
        }
    }
}

#[inline]
fn moved(l: usize, j: usize, deltas: &BoundDeltas) -> bool {
    deltas.alpha_norm[l] != 0.0 || deltas.beta[j] != 0.0
}

#[inline]
pub fn upper_bound(l: usize, j: usize, snap: &SnapshotStore, deltas: &BoundDeltas) -> f64 {
    let raw = snap.z_snap.get(l, j) + deltas.alpha_pos[l] + deltas.sqrt_g[l] * deltas.beta[j].max(0.0);
    // An unmoved block has bitwise the same residual, hence the same z.
    if moved(l, j, deltas) {
        raw * (1.0 + deltas.rel_slack[l]) + deltas.abs_slack[l]
    } else {
        raw
    }
}

#[inline]
pub fn lower_bound(l: usize, j: usize, snap: &SnapshotStore, deltas: &BoundDeltas) -> f64 {
    let db = deltas.beta[j];
    let sg = deltas.sqrt_g[l];
    let (k, o) = (snap.k_snap.get(l, j), snap.o_snap.get(l, j));
    let raw = k - deltas.alpha_norm[l] - sg * db.abs() - o - deltas.alpha_neg[l] - sg * (-db).max(0.0);
    // Unmoved sign-pure blocks are exact: either o~ = 0 and k~ = z, or k~ = o~ and z = 0.
    if moved(l, j, deltas) || (o != 0.0 && snap.z_snap.get(l, j) != 0.0) {
        let magnitude = k + o + deltas.alpha_norm[l] + deltas.alpha_neg[l] + 2.0 * sg * db.abs();
        raw - deltas.rel_slack[l] * magnitude - deltas.abs_slack[l]
    } else {
        raw
    }
}

/// Counts the blocks an upper-bound pass over every `(l, j)` would skip.
pub fn upper_bound_pass(snap: &SnapshotStore, deltas: &BoundDeltas, tau: f64) -> usize {
    let nl = snap.z_snap.rows();
    (0..snap.z_snap.cols())
        .map(|j| (0..nl).filter(|&l| upper_bound(l, j, snap, deltas) <= tau).count())
        .sum()
}

/// Pairs `(l, j)` certified to have a nonzero gradient block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveSet {
    num_groups: usize,
    membership: Vec<bool>,
    count: usize,
}

impl ActiveSet {
    pub fn empty(num_groups: usize, n: usize) -> Self {
        Self { num_groups, membership: vec![false; num_groups * n], count: 0 }
    }

    pub fn full(num_groups: usize, n: usize) -> Self {
        Self { num_groups, membership: vec![true; num_groups * n], count: num_groups * n }
    }

    #[inline]
    pub fn contains(&self, l: usize, j: usize) -> bool {
        self.membership[j * self.num_groups + l]
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

/// `{(l, j) : lower_bound(l, j) > mu*gamma}` at `state`.
pub fn build_active_set(snap: &SnapshotStore, state: &DualState, p: &RegParams, groups: &GroupPartition) -> ActiveSet {
    let deltas = BoundDeltas::new(&state.alpha, &state.beta, snap, groups);
    build_from_deltas(snap, &deltas, p.tau())
}

fn build_from_deltas(snap: &SnapshotStore, deltas: &BoundDeltas, tau: f64) -> ActiveSet {
    let (nl, n) = (snap.k_snap.rows(), snap.k_snap.cols());
    let mut set = ActiveSet::empty(nl, n);
    for j in 0..n {
        for l in 0..nl {
            if lower_bound(l, j, snap, deltas) > tau {
                set.membership[j * nl + l] = true;
                set.count += 1;
            }
        }
    }
    set
}

/// Block counters for one gradient call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CallStats {
    pub iteration: usize,
    pub in_active: u64,
    pub skipped: u64,
    pub unskipped: u64,
    pub upper_bounds: u64,
}

impl CallStats {
    fn merge(&mut self, other: &CallStats) {
        self.in_active += other.in_active;
        self.skipped += other.skipped;
        self.unskipped += other.unskipped;
        self.upper_bounds += other.upper_bounds;
    }

    pub fn total(&self) -> u64 {
        self.in_active + self.skipped + self.unskipped
    }
}

/// Cumulative block counters over a solve.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradStats {
    pub blocks_in_active_set: u64,
    pub blocks_skipped: u64,
    pub blocks_unskipped: u64,
    pub upper_bounds_evaluated: u64,
    pub outer_loops: u64,
    pub gradient_calls: u64,
    pub history: Vec<CallStats>,
}

impl GradStats {
    pub fn record(&mut self, call: CallStats) {
        self.blocks_in_active_set += call.in_active;
        self.blocks_skipped += call.skipped;
        self.blocks_unskipped += call.unskipped;
        self.upper_bounds_evaluated += call.upper_bounds;
        self.gradient_calls += 1;
        self.history.push(call);
    }

    /// Blocks whose gradient was evaluated exactly.
    pub fn blocks_computed(&self) -> u64 {
        self.blocks_in_active_set + self.blocks_unskipped
    }

    pub fn blocks_total(&self) -> u64 {
        self.blocks_computed() + self.blocks_skipped
    }

    pub fn skip_fraction(&self) -> f64 {
        match self.blocks_total() {
            0 => 0.0,
            t => self.blocks_skipped as f64 / t as f64,
        }
    }
}

/// Knobs of the screened evaluator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScreeningConfig {
    /// Rebuild the active set from lower bounds at each refresh.
    pub use_lower_bound: bool,
    /// Exhaustively verify every skip and inclusion, and compare each call
    /// against the full evaluation.
    pub audit: bool,
    /// Fault injection for audit tests. Added to every upper bound; anything
    /// other than zero breaks the safety guarantee.
    #[doc(hidden)]
    pub upper_bound_shift: f64,
}

impl Default for ScreeningConfig {
    fn default() -> Self {
        Self { use_lower_bound: true, audit: false, upper_bound_shift: 0.0 }
    }
}

/// Totals of what an audit checked.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AuditReport {
    pub skipped_blocks_checked: u64,
    pub active_blocks_checked: u64,
    pub gradient_calls_compared: u64,
    pub violations: u64,
}

#[derive(Default)]
struct ChunkExtra {
    counts: CallStats,
    skipped_checked: u64,
    scratch: Vec<f64>,
}

/// Conjugate-term evaluator that skips blocks proven zero.
pub struct FastPsi<'a> {
    inst: &'a ProblemInstance,
    params: RegParams,
    config: ScreeningConfig,
    snap: SnapshotStore,
    active: ActiveSet,
    stats: GradStats,
    audit: AuditReport,
}

impl<'a> FastPsi<'a> {
    /// Snapshot at `start`, empty active set.
    pub fn new(inst: &'a ProblemInstance, params: RegParams, start: &DualState, config: ScreeningConfig) -> Result<Self> {
        let snap = take_snapshot(start, inst, 0)?;
        let active = ActiveSet::empty(inst.num_groups(), inst.n());
        Ok(Self { inst, params, config, snap, active, stats: GradStats::default(), audit: AuditReport::default() })
    }

    pub fn snapshot(&self) -> &SnapshotStore {
        &self.snap
    }

    pub fn active_set(&self) -> &ActiveSet {
        &self.active
    }

    pub fn set_active_set(&mut self, active: ActiveSet) {
        self.active = active;
    }

    pub fn audit_report(&self) -> AuditReport {
        self.audit
    }

    pub fn into_parts(self) -> (GradStats, AuditReport) {
        (self.stats, self.audit)
    }

    /// End-of-chunk work: rebuild the active set from lower bounds against the
    /// current snapshot, then snapshot the current iterate.
    pub fn refresh(&mut self, state: &DualState, iteration: usize) -> Result<()> {
        if self.config.use_lower_bound {
            let deltas = BoundDeltas::new(&state.alpha, &state.beta, &self.snap, &self.inst.groups);
            self.active = build_from_deltas(&self.snap, &deltas, self.params.tau());
            if self.config.audit {
                self.check_inclusions(state, &deltas, iteration)?;
            }
        }
        self.snap = take_snapshot(state, self.inst, iteration)?;
        self.stats.outer_loops += 1;
        Ok(())
    }

    fn check_inclusions(&mut self, state: &DualState, deltas: &BoundDeltas, iteration: usize) -> Result<()> {
        let tau = self.params.tau();
        for j in 0..self.inst.n() {
            for l in 0..self.inst.num_groups() {
                if !self.active.contains(l, j) {
                    continue;
                }
                self.audit.active_blocks_checked += 1;
                let z = exact_z(state, self.inst, l, j);
                if z <= tau {
                    self.audit.violations += 1;
                    return Err(Error::AuditViolation(Box::new(AuditViolation {
                        kind: ViolationKind::UnsafeInclusion,
                        group: l,
                        column: j,
                        iteration,
                        z,
                        upper: f64::NAN,
                        lower: lower_bound(l, j, &self.snap, deltas),
                        tau,
                    })));
                }
            }
        }
        Ok(())
    }

    fn compare_with_full(&mut self, alpha: &[f64], beta: &[f64], fast: &PsiSums, iteration: usize) -> Result<()> {
        let inst = self.inst;
        let p = self.params;
        let (full, _) = sweep_columns(inst, || (), |j, acc, _| {
            for rows in inst.groups.ranges() {
                acc.block(alpha, beta[j], inst.cost.col(j), rows, &p);
            }
            Ok(())
        })?;
        self.audit.gradient_calls_compared += 1;
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        let violation = |kind, group, column, z| AuditViolation {
            kind,
            group,
            column,
            iteration,
            z,
            upper: f64::NAN,
            lower: f64::NAN,
            tau: p.tau(),
        };
        let found = if full.psi.to_bits() != fast.psi.to_bits() {
            Some(violation(ViolationKind::ObjectiveMismatch, 0, 0, full.psi))
        } else if let Some(i) = bits(&full.row).iter().zip(bits(&fast.row)).position(|(a, b)| *a != b) {
            let group = inst.groups.offsets().partition_point(|&o| o <= i) - 1;
            Some(violation(ViolationKind::GradientMismatch, group, 0, full.row[i]))
        } else {
            bits(&full.col)
                .iter()
                .zip(bits(&fast.col))
                .position(|(a, b)| *a != b)
                .map(|j| violation(ViolationKind::GradientMismatch, 0, j, full.col[j]))
        };
        match found {
            Some(v) => {
                self.audit.violations += 1;
                Err(Error::AuditViolation(Box::new(v)))
            }
            None => Ok(()),
        }
    }
}

impl PsiEvaluator for FastPsi<'_> {
    fn evaluate(&mut self, alpha: &[f64], beta: &[f64], iteration: usize) -> Result<PsiSums> {
        let inst = self.inst;
        let p = self.params;
        let tau = p.tau();
        let (snap, active, config) = (&self.snap, &self.active, self.config);
        let deltas = BoundDeltas::new(alpha, beta, snap, &inst.groups);
        let max_group = inst.groups.max_size();

        let (sums, extras) = sweep_columns(
            inst,
            || ChunkExtra { scratch: vec![0.0; max_group], ..Default::default() },
            |j, acc, extra| {
                let cost = inst.cost.col(j);
                for (l, rows) in inst.groups.ranges().enumerate() {
                    if active.contains(l, j) {
                        acc.block(alpha, beta[j], cost, rows, &p);
                        extra.counts.in_active += 1;
                        continue;
                    }
                    let upper = upper_bound(l, j, snap, &deltas) + config.upper_bound_shift;
                    extra.counts.upper_bounds += 1;
                    if upper <= tau {
                        extra.counts.skipped += 1;
                        if config.audit {
                            extra.skipped_checked += 1;
                            let f = &mut extra.scratch[..rows.len()];
                            residual_block(f, &alpha[rows.clone()], beta[j], &cost[rows]);
                            let z = positive_norm(f);
                            if threshold_in_place(f, &p).1.is_some() {
                                return Err(Error::AuditViolation(Box::new(AuditViolation {
                                    kind: ViolationKind::UnsafeSkip,
                                    group: l,
                                    column: j,
                                    iteration,
                                    z,
                                    upper,
                                    lower: lower_bound(l, j, snap, &deltas),
                                    tau,
                                })));
                            }
                        }
                    } else {
                        acc.block(alpha, beta[j], cost, rows, &p);
                        extra.counts.unskipped += 1;
                    }
                }
                Ok(())
            },
        )
        .inspect_err(|e| {
            if matches!(e, Error::AuditViolation(_)) {
                self.audit.violations += 1;
            }
        })?;

        let mut call = CallStats { iteration, ..Default::default() };
        for extra in &extras {
            call.merge(&extra.counts);
            self.audit.skipped_blocks_checked += extra.skipped_checked;
        }
        self.stats.record(call);
        if self.config.audit {
            self.compare_with_full(alpha, beta, &sums, iteration)?;
        }
        Ok(sums)
    }

    fn stats(&self) -> &GradStats {
        &self.stats
    }
}

/// Screened conjugate gradient for every column, assembled as an `m x n`
/// matrix. Counters for the call are added to `stats`.
pub fn fast_grad_psi(
    state: &DualState,
    inst: &ProblemInstance,
    p: &RegParams,
    snap: &SnapshotStore,
    active: &ActiveSet,
    stats: &mut GradStats,
) -> Result<ColMatrix> {
    state.check(inst)?;
    let tau = p.tau();
    let deltas = BoundDeltas::new(&state.alpha, &state.beta, snap, &inst.groups);
    let mut out = ColMatrix::zeros(inst.m(), inst.n());
    let mut call = CallStats::default();
    for j in 0..inst.n() {
        let cost = inst.cost.col(j);
        let col = out.col_mut(j);
        for (l, rows) in inst.groups.ranges().enumerate() {
            if active.contains(l, j) {
                call.in_active += 1;
            } else {
                call.upper_bounds += 1;
                if upper_bound(l, j, snap, &deltas) <= tau {
                    call.skipped += 1;
                    continue;
                }
                call.unskipped += 1;
            }
            let block = &mut col[rows.clone()];
            residual_block(block, &state.alpha[rows.clone()], state.beta[j], &cost[rows]);
            if threshold_in_place(block, p).1.is_none() {
                block.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }
    stats.record(call);
    Ok(out)
}
