//! Problem instances, regularization parameters and primal-side evaluation.

use std::ops::Range;

use crate::error::{Error, Result, Side};
use crate::matrix::ColMatrix;

/// Absolute tolerance on `|sum - 1|` for the marginals.
pub const MARGINAL_TOL: f64 = 1e-12;

/// Partition of the source indices `0..m` into contiguous label groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupPartition {
    offsets: Vec<usize>,
}

impl GroupPartition {
    /// Builds a partition from consecutive group sizes.
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::InvalidParameter { name: "group count", value: 0.0 });
        }
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        offsets.push(0);
        for &g in sizes {
            if g == 0 {
                return Err(Error::InvalidParameter { name: "group size", value: 0.0 });
            }
            offsets.push(offsets.last().unwrap() + g);
        }
        Ok(Self { offsets })
    }

    /// `num_groups` groups of `size` rows each.
    pub fn uniform(num_groups: usize, size: usize) -> Result<Self> {
        Self::from_sizes(&vec![size; num_groups])
    }

    /// One group per run of equal labels. Labels must already be sorted.
    pub fn from_sorted_labels(labels: &[u32]) -> Result<Self> {
        let mut sizes = Vec::new();
        let mut prev: Option<u32> = None;
        for (i, &label) in labels.iter().enumerate() {
            match prev {
                Some(p) if p == label => *sizes.last_mut().unwrap() += 1,
                Some(p) if p > label => {
                    return Err(Error::Parse {
                        line: i as u64,
                        column: 0,
                        message: format!("labels are not sorted ({p} before {label})"),
                    })
                }
                _ => sizes.push(1),
            }
            prev = Some(label);
        }
        Self::from_sizes(&sizes)
    }

    /// Number of groups `|L|`.
    #[inline]
    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Total number of source rows `m`.
    #[inline]
    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    #[inline]
    pub fn range(&self, l: usize) -> Range<usize> {
        self.offsets[l]..self.offsets[l + 1]
    }

    #[inline]
    pub fn size(&self, l: usize) -> usize {
        self.offsets[l + 1] - self.offsets[l]
    }

    pub fn max_size(&self) -> usize {
        (0..self.len()).map(|l| self.size(l)).max().unwrap_or(0)
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        self.offsets.windows(2).map(|w| w[0]..w[1])
    }
}

/// Regularization strengths `gamma` and `mu` of the group-sparse penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegParams {
    gamma: f64,
    mu: f64,
}

impl RegParams {
    pub fn new(gamma: f64, mu: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidParameter { name: "gamma", value: gamma });
        }
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::InvalidParameter { name: "mu", value: mu });
        }
        Ok(Self { gamma, mu })
    }

    /// Converts the balanced form `gamma * (0.5 (1-rho) |t|^2 + rho sum_l |t_l|)`
    /// into the `(gamma, mu)` form: `gamma (1-rho)` and `rho / (1-rho)`.
    pub fn from_rho(gamma: f64, rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::RhoOutOfRange(rho));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidParameter { name: "gamma", value: gamma });
        }
        let smooth = 1.0 - rho;
        Self::new(gamma * smooth, rho / smooth)
    }

    #[inline]
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    #[inline]
    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Skip threshold `mu * gamma`: a block whose clamped residual norm does
    /// not exceed it has a zero gradient.
    #[inline]
    pub fn tau(&self) -> f64 {
        self.mu * self.gamma
    }

    /// Regularizer value `gamma (0.5 |t|^2 + mu sum_l |t_l|)` for one plan column.
    pub fn penalty(&self, column: &[f64], groups: &GroupPartition) -> f64 {
        let sq: f64 = column.iter().map(|v| v * v).sum();
        let group_norms: f64 = groups
            .ranges()
            .map(|r| column[r].iter().map(|v| v * v).sum::<f64>().sqrt())
            .sum();
        self.gamma * (0.5 * sq + self.mu * group_norms)
    }
}

/// See [`RegParams::from_rho`].
pub fn params_from_rho(gamma: f64, rho: f64) -> Result<RegParams> {
    RegParams::from_rho(gamma, rho)
}

/// A discrete transport problem: cost, marginals and source grouping.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    /// `m x n` non-negative costs.
    pub cost: ColMatrix,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub groups: GroupPartition,
}

impl ProblemInstance {
    pub fn new(cost: ColMatrix, a: Vec<f64>, b: Vec<f64>, groups: GroupPartition) -> Result<Self> {
        let inst = Self { cost, a, b, groups };
        validate_instance(&inst)?;
        Ok(inst)
    }

    /// Instance with uniform marginals `1/m` and `1/n`.
    pub fn uniform(cost: ColMatrix, groups: GroupPartition) -> Result<Self> {
        let (m, n) = (cost.rows(), cost.cols());
        Self::new(cost, vec![1.0 / m as f64; m], vec![1.0 / n as f64; n], groups)
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.cost.rows()
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.cost.cols()
    }

    #[inline]
    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }
}

/// Checks every structural invariant of `inst`.
pub fn validate_instance(inst: &ProblemInstance) -> Result<()> {
    let (m, n) = (inst.cost.rows(), inst.cost.cols());
    if inst.groups.total() != m {
        let group = inst.groups.len() - 1;
        return Err(Error::PartitionMismatch { expected: m, found: inst.groups.total(), group });
    }
    if inst.a.len() != m {
        return Err(Error::DimensionMismatch { what: "source marginal", expected: m, found: inst.a.len() });
    }
    if inst.b.len() != n {
        return Err(Error::DimensionMismatch { what: "target marginal", expected: n, found: inst.b.len() });
    }
    for i in 0..m {
        for j in 0..n {
            let c = inst.cost.get(i, j);
            if !c.is_finite() {
                return Err(Error::NonFiniteCost { row: i, col: j });
            }
            if c < 0.0 {
                return Err(Error::NegativeCost { row: i, col: j });
            }
        }
    }
    check_marginal(&inst.a, Side::Source)?;
    check_marginal(&inst.b, Side::Target)
}

fn check_marginal(v: &[f64], side: Side) -> Result<()> {
    let sum: f64 = v.iter().sum();
    if let Some(i) = v.iter().position(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::MarginalNotNormalized { side, index: Some(i), sum });
    }
    if (sum - 1.0).abs() > MARGINAL_TOL {
        return Err(Error::MarginalNotNormalized { side, index: None, sum });
    }
    Ok(())
}

/// A transport plan, stored like the cost matrix (one contiguous column per target).
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub plan: ColMatrix,
}

impl TransportPlan {
    pub fn zeros(m: usize, n: usize) -> Self {
        Self { plan: ColMatrix::zeros(m, n) }
    }

    pub fn mass(&self) -> f64 {
        self.plan.as_slice().iter().sum()
    }
}

/// `<T, C>_F + sum_j Psi(t_j)`.
pub fn primal_objective(t: &TransportPlan, inst: &ProblemInstance, p: &RegParams) -> Result<f64> {
    let (m, n) = (inst.m(), inst.n());
    if t.plan.rows() != m || t.plan.cols() != n {
        return Err(Error::DimensionMismatch {
            what: "transport plan",
            expected: m * n,
            found: t.plan.rows() * t.plan.cols(),
        });
    }
    let mut total = 0.0;
    for j in 0..n {
        let col = t.plan.col(j);
        let transport: f64 = col.iter().zip(inst.cost.col(j)).map(|(t, c)| t * c).sum();
        total += transport + p.penalty(col, &inst.groups);
    }
    Ok(total)
}
