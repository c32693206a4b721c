use num_rational::BigRational;
use thiserror::Error;

use crate::bitseq::BitString;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Everything that can go wrong in this crate.
///
/// Variants split into two families: input validation (bad configs, malformed
/// tables, invalid trees) and computation-contract failures (stalls, exceeded
/// caps, violated bounds). [`Error::is_contract_failure`] tells them apart;
/// the CLI maps them to exit codes 1 and 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("no closed-form entropy for {0}")]
    NoClosedFormEntropy(String),

    #[error("measure is not positive: {0}")]
    NotPositive(String),

    #[error("trivial block map: every block maps to the empty string")]
    TrivialBlockMap,

    #[error("partial table: missing entry for block {0}")]
    PartialTable(BitString),

    #[error("incompatible measure step {measure_step} for a {block_size}-block map")]
    IncompatibleStep {
        measure_step: usize,
        block_size: usize,
    },

    #[error("terminal set is not prefix-free: {0} is a prefix of {1}")]
    NotPrefixFree(BitString, BitString),

    #[error("terminal mass {} by {}", if *.excess { "excess" } else { "deficit" }, .gap)]
    MassMismatch { gap: BigRational, excess: bool },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("division by zero: output/input ratio of the empty string")]
    EmptyInput,

    #[error("exhaustive enumeration refused for n = {n} (limit {limit})")]
    EnumerationRefused { n: usize, limit: usize },

    #[error("infeasible preimage expansion: {0}")]
    Infeasible(String),

    #[error("output stalled: reached length {reached} of {wanted} after {consumed} input bits (cap {cap})")]
    OutputStalled {
        wanted: usize,
        reached: usize,
        consumed: usize,
        cap: usize,
    },

    #[error("stalled after {consumed} input bits (cap {cap}) with {} symbols emitted", .labels.len())]
    Stalled {
        consumed: usize,
        cap: usize,
        /// Labels emitted before the stall.
        labels: Vec<usize>,
        /// End positions of the completed blocks.
        boundaries: Vec<usize>,
    },

    #[error(
        "conversion stalled: {output_len} output bits after {consumed} input bits (cap {cap})"
    )]
    ConversionStalled {
        consumed: usize,
        cap: usize,
        output_len: usize,
        partial: BitString,
        g_trace: Vec<usize>,
    },

    #[error("canonicalization depth exceeded at depth {depth} for {sigma}: {reason}")]
    CanonicalizationDepthExceeded {
        sigma: BitString,
        depth: usize,
        reason: StallReason,
    },

    #[error("bound violated: {0}")]
    BoundViolated(String),

    #[error("tail certification failed: {0}")]
    TailNotCertified(String),
}

/// Why [`crate::generators::canonicalize`] could not certify a prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StallReason {
    /// The common prefix of all extensions kept growing up to the cap, as it
    /// does for a functional that is constant on the cylinder.
    PrefixStillGrowing,
    /// Some extension's output never grew past the candidate prefix, as it
    /// does for a partial or slow functional.
    OutputsTooShort,
}

impl std::fmt::Display for StallReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StallReason::PrefixStillGrowing => f.write_str("common prefix still growing"),
            StallReason::OutputsTooShort => f.write_str("outputs not long enough"),
        }
    }
}

impl Error {
    /// True for failures of a computation contract (stall, cap, bound)
    /// rather than of input validation.
    pub fn is_contract_failure(&self) -> bool {
        matches!(
            self,
            Error::OutputStalled { .. }
                | Error::Stalled { .. }
                | Error::ConversionStalled { .. }
                | Error::CanonicalizationDepthExceeded { .. }
                | Error::BoundViolated(_)
                | Error::TailNotCertified(_)
                | Error::EnumerationRefused { .. }
                | Error::Infeasible(_)
        )
    }
}
