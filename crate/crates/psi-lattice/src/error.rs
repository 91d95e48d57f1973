//! Crate-wide error type.
//!
//! Arithmetic failures (division by zero, ramps over precision budgets) and
//! mathematical verdicts (a matrix fails to be invertible, an iteration fails
//! to stabilize) are kept in a single enum so that callers can match on the
//! precise failure mode.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("division by zero")]
    DivisionByZero,

    #[error("element is not a unit: {0}")]
    NotAUnit(String),

    #[error("precision exhausted: {0}")]
    PrecisionExhausted(String),

    #[error("series is not invertible: {0}")]
    NotInvertible(String),

    #[error("module is not etale: {0}")]
    NotEtale(String),

    #[error("operator commutation fails: {0}")]
    CommutationFailure(String),

    #[error("generators do not span a full-rank lattice")]
    NotFullRank,

    #[error("lattices are not comparable: {0}")]
    NotComparable(String),

    #[error("iteration did not stabilize within {cap} steps: {what}")]
    NonStabilizing { what: String, cap: usize },

    #[error("relation set cannot be oriented for rewriting: {0}")]
    NonTerminatingRewrite(String),

    #[error("presentation is not admissible: {0}")]
    NotAdmissible(String),

    #[error("rank extraction unstable: {0}")]
    RankExtractionUnstable(String),

    #[error("inconclusive at the configured expansion limits: {0}")]
    Inconclusive(String),

    #[error("relation is not Gamma-equivariant: {0}")]
    NotEquivariant(String),

    #[error("parameter out of range: {0}")]
    ParameterOutOfRange(String),

    #[error("orbit did not reach the target lattice within {cap} steps")]
    NotReached { cap: usize },

    #[error("no equivariant splitting with support bound {bound}")]
    NoSplittingUpTo { bound: i64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
