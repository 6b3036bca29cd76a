use std::fmt;

use thiserror::Error;

/// Which marginal an error refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Source,
    Target,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Side::Source => f.write_str("source"),
            Side::Target => f.write_str("target"),
        }
    }
}

/// Which screening guarantee an audit found broken.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    /// A block skipped through the upper bound has a nonzero exact gradient.
    UnsafeSkip,
    /// A block admitted to the active set has a zero exact gradient.
    UnsafeInclusion,
    /// The screened gradient differs from the full gradient.
    GradientMismatch,
    /// The screened objective differs from the full objective.
    ObjectiveMismatch,
}

/// Diagnostic carried by [`Error::AuditViolation`].
#[derive(Debug, Clone, PartialEq)]
pub struct AuditViolation {
    pub kind: ViolationKind,
    pub group: usize,
    pub column: usize,
    pub iteration: usize,
    pub z: f64,
    pub upper: f64,
    pub lower: f64,
    pub tau: f64,
}

impl fmt::Display for AuditViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:?} at group {} column {} iteration {}: z={:e} upper={:e} lower={:e} tau={:e}",
            self.kind, self.group, self.column, self.iteration, self.z, self.upper, self.lower, self.tau
        )
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("negative cost at ({row}, {col})")]
    NegativeCost { row: usize, col: usize },

    #[error("non-finite cost at ({row}, {col})")]
    NonFiniteCost { row: usize, col: usize },

    #[error("{side} marginal is not a probability vector{}", index.map(|i| format!(" (entry {i})")).unwrap_or_else(|| format!(" (sum {sum})")))]
    MarginalNotNormalized {
        side: Side,
        /// First offending entry, or `None` when only the sum is off.
        index: Option<usize>,
        sum: f64,
    },

    #[error("group partition covers {found} rows but the cost matrix has {expected} (group {group})")]
    PartitionMismatch { expected: usize, found: usize, group: usize },

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch { what: &'static str, expected: usize, found: usize },

    #[error("rho must lie in (0, 1), got {0}")]
    RhoOutOfRange(f64),

    #[error("invalid parameter {name}: {value}")]
    InvalidParameter { name: &'static str, value: f64 },

    #[error("audit violation: {0}")]
    AuditViolation(Box<AuditViolation>),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: u64, column: usize, message: String },

    #[error("source file has no `label` column")]
    MissingLabelColumn,

    #[error("inconsistent feature dimension at line {line}: expected {expected}, found {found}")]
    InconsistentDimension { line: u64, expected: usize, found: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
