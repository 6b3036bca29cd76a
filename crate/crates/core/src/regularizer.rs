//! The group-sparse penalty's convex conjugate and its soft-thresholded gradient.
//!
//! For one column residual `f`, the conjugate is `psi(f) = f.g* - Psi(g*)` where
//! `g*` decomposes over groups as
//!
//! ```text
//! g*_l = [1 - mu*gamma / z_l]_+ * [f_l]_+ / gamma,   z_l = |[f_l]_+|_2
//! ```
//!
//! Every routine here funnels through [`threshold_in_place`], so a block computed
//! by the baseline path and by the screened path is bitwise the same value.

use crate::error::{Error, Result};
use crate::problem::{GroupPartition, RegParams};

/// Gradient block of the conjugate for one group.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBlockResult {
    pub block: Vec<f64>,
    pub is_zero: bool,
    /// Norm of the clamped residual, compared against `mu * gamma`.
    pub z_value: f64,
}

/// `|[f]_+|_2`.
#[inline]
pub fn positive_norm(f: &[f64]) -> f64 {
    let mut acc = 0.0;
    for &v in f {
        let p = v.max(0.0);
        acc += p * p;
    }
    acc.sqrt()
}

/// Soft-thresholds one residual block held in `buf`.
///
/// Returns `(z, Some(contribution))` when the block survives, in which case
/// `buf` now holds the gradient block and `contribution` is that block's share
/// of `psi`. Returns `(z, None)` when `z <= mu*gamma`; `buf` is left holding the
/// residual and the caller treats the block as exactly zero.
#[inline]
pub fn threshold_in_place(buf: &mut [f64], p: &RegParams) -> (f64, Option<f64>) {
    let z = positive_norm(buf);
    let tau = p.tau();
    if z <= tau {
        return (z, None);
    }
    let factor = 1.0 - tau / z;
    let gamma = p.gamma();
    let mut dot = 0.0;
    let mut sq = 0.0;
    for v in buf.iter_mut() {
        let f = *v;
        let g = factor * (f.max(0.0) / gamma);
        dot += f * g;
        sq += g * g;
        *v = g;
    }
    (z, Some(dot - gamma * (0.5 * sq + p.mu() * sq.sqrt())))
}

pub fn grad_psi_block(f_block: &[f64], p: &RegParams) -> GradBlockResult {
    let mut block = f_block.to_vec();
    let (z, contribution) = threshold_in_place(&mut block, p);
    if contribution.is_none() {
        block.iter_mut().for_each(|v| *v = 0.0);
    }
    GradBlockResult { block, is_zero: contribution.is_none(), z_value: z }
}

fn check_len(f: &[f64], groups: &GroupPartition) -> Result<()> {
    if f.len() != groups.total() {
        return Err(Error::DimensionMismatch { what: "residual vector", expected: groups.total(), found: f.len() });
    }
    Ok(())
}

/// `psi(f)`, summed group by group.
pub fn psi_value(f: &[f64], groups: &GroupPartition, p: &RegParams) -> Result<f64> {
    check_len(f, groups)?;
    let mut scratch = vec![0.0; groups.max_size()];
    let mut total = 0.0;
    for r in groups.ranges() {
        let buf = &mut scratch[..r.len()];
        buf.copy_from_slice(&f[r]);
        if let (_, Some(c)) = threshold_in_place(buf, p) {
            total += c;
        }
    }
    Ok(total)
}

/// Full gradient `grad psi(f)`, every group evaluated.
pub fn grad_psi_full(f: &[f64], groups: &GroupPartition, p: &RegParams) -> Result<Vec<f64>> {
    check_len(f, groups)?;
    let mut out = f.to_vec();
    for r in groups.ranges() {
        let block = &mut out[r];
        if threshold_in_place(block, p).1.is_none() {
            block.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    Ok(out)
}
