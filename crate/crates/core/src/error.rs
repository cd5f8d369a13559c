use thiserror::Error;

use crate::primitives::GroupSize;

/// Errors raised by fitting, randomization and test construction.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("design matrix is numerically singular (condition estimate {condition:.3e})")]
    SingularDesign { condition: f64 },

    #[error("constraint is degenerate: a'(X'X)^-1 a = {value:.3e}")]
    DegenerateConstraint { value: f64 },

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid hypothesis: {0}")]
    InvalidHypothesis(String),

    #[error("invalid labels: {0}")]
    InvalidLabels(String),

    #[error("primitive is defined for n = {expected} but data has n = {found}")]
    LayoutMismatch { expected: usize, found: usize },

    #[error("group of size {size} exceeds enumeration cap {cap}")]
    GroupTooLarge { size: GroupSize, cap: u64 },

    #[error("two-way permutations need one observation per cell; cell ({row}, {col}) has {count}")]
    ReplicatedCell {
        row: usize,
        col: usize,
        count: usize,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error(
        "design is not divisible into {clusters} balanced clusters \
         (treated remainder {treated_remainder}, control remainder {control_remainder})"
    )]
    IndivisibleDesign {
        clusters: usize,
        treated_remainder: usize,
        control_remainder: usize,
    },

    #[error("design is not supported: {0}")]
    UnsupportedDesign(String),

    #[error("no grid value was accepted; the acceptance region is empty")]
    EmptyAcceptanceRegion,

    #[error("lasso did not converge after {sweeps} sweeps (KKT gap {kkt_gap:.3e})")]
    NoConvergence { sweeps: usize, kkt_gap: f64 },

    #[error("dataset has no time index")]
    MissingTimeIndex,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("corrupt data fixture: {0}")]
    CorruptFixture(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// True for errors caused by the numbers rather than by malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularDesign { .. }
                | Error::DegenerateConstraint { .. }
                | Error::NoConvergence { .. }
                | Error::EmptyAcceptanceRegion
        )
    }
}
