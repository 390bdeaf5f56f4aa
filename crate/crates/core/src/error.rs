use std::fmt;

use serde::Serialize;
use thiserror::Error;

/// A single broken invariant found while validating a raw model.
///
/// State and row indices are 0-based here; the CLI reports them 1-based.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind")]
pub enum Violation {
    DimensionMismatch {
        field: &'static str,
        expected: usize,
        found: usize,
    },
    EmptyModel,
    NonFinite {
        field: &'static str,
        index: usize,
    },
    RowSumViolation {
        row: usize,
        sum: f64,
    },
    NegativeRate {
        row: usize,
        col: usize,
        value: f64,
    },
    Reducible {
        unreachable_from_first: Vec<usize>,
    },
    NegativeSigma {
        state: usize,
        value: f64,
    },
    BarrierOrder {
        state: usize,
        a: f64,
        b: f64,
    },
    BarriersTooClose {
        left: f64,
        right: f64,
    },
    AllBarriersDegenerateWithKappaZero {
        kappa: f64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DimensionMismatch {
                field,
                expected,
                found,
            } => write!(f, "`{field}` has length {found}, expected {expected}"),
            Violation::EmptyModel => write!(f, "model has no states"),
            Violation::NonFinite { field, index } => {
                write!(f, "`{field}` entry {index} is not finite")
            }
            Violation::RowSumViolation { row, sum } => {
                write!(f, "row {} of q sums to {sum:e}, expected 0", row + 1)
            }
            Violation::NegativeRate { row, col, value } => write!(
                f,
                "off-diagonal rate q[{}][{}] = {value} is negative",
                row + 1,
                col + 1
            ),
            Violation::Reducible {
                unreachable_from_first,
            } => {
                let states: Vec<String> = unreachable_from_first
                    .iter()
                    .map(|s| (s + 1).to_string())
                    .collect();
                write!(
                    f,
                    "rate matrix is reducible (states not mutually reachable with state 1: {})",
                    states.join(", ")
                )
            }
            Violation::NegativeSigma { state, value } => {
                write!(f, "sigma of state {} is negative ({value})", state + 1)
            }
            Violation::BarrierOrder { state, a, b } => {
                write!(f, "state {} has a = {a} > b = {b}", state + 1)
            }
            Violation::BarriersTooClose { left, right } => write!(
                f,
                "barrier levels {left} and {right} are distinct but closer than the merge tolerance"
            ),
            Violation::AllBarriersDegenerateWithKappaZero { kappa } => write!(
                f,
                "an interval is shared by every state and the asymptotic drift is zero (kappa = {kappa:e})"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationError {
    pub violations: Vec<Violation>,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msgs: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", msgs.join("; "))
    }
}

impl std::error::Error for ValidationError {}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    Validation(#[from] ValidationError),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular system while computing the stationary vector")]
    SingularSystem,

    #[error("degenerate model: every barrier equals {0}")]
    DegenerateModel(f64),

    #[error("no state has positive diffusion or nonzero drift; the content is a deterministic function of the environment")]
    NoDynamicStates,

    #[error("interval {interval}: zero is a repeated mode (zero asymptotic drift)")]
    DegenerateZeroMode { interval: usize },

    #[error("interval {interval}: modes {first} and {second} coincide, the pencil is not semisimple")]
    NotSemisimple {
        interval: usize,
        first: usize,
        second: usize,
    },

    #[error("interval {interval}: mode matrix has rank {rank}, expected {expected}")]
    RankDeficient {
        interval: usize,
        rank: usize,
        expected: usize,
    },

    #[error("interval {interval}: pencil residual {residual:e} exceeds tolerance")]
    PencilResidual { interval: usize, residual: f64 },

    #[error("interval {interval}: constant coefficient matrix is singular with nonzero forcing")]
    SingularA0 { interval: usize },

    #[error("constraint system has {rows} rows for {cols} unknowns")]
    CountMismatch { rows: usize, cols: usize },

    #[error("linear system is numerically singular (condition estimate {condition:e})")]
    NumericallySingular { condition: f64 },

    #[error("parameters outside the closed-form case: {0}")]
    SignConstraintViolated(String),

    #[error("characteristic polynomial has a repeated root")]
    RootMultiplicity,

    #[error("characteristic polynomial has non-real roots")]
    ComplexRoots,

    #[error("invalid simulation config: {0}")]
    ConfigInvalid(String),

    #[error("observed {observed} regeneration cycles, need at least {required}")]
    TooFewCycles { observed: usize, required: usize },
}

impl Error {
    /// Whether the failure comes from bad input or settings (as opposed to a numerical breakdown).
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Validation(_)
                | Error::InvalidArgument(_)
                | Error::DegenerateModel(_)
                | Error::NoDynamicStates
                | Error::SignConstraintViolated(_)
                | Error::ConfigInvalid(_)
                | Error::TooFewCycles { .. }
        )
    }

    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Validation(_) => "Validation",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::SingularSystem => "SingularSystem",
            Error::DegenerateModel(_) => "DegenerateModel",
            Error::NoDynamicStates => "NoDynamicStates",
            Error::DegenerateZeroMode { .. } => "DegenerateZeroMode",
            Error::NotSemisimple { .. } => "NotSemisimple",
            Error::RankDeficient { .. } => "RankDeficient",
            Error::PencilResidual { .. } => "PencilResidual",
            Error::SingularA0 { .. } => "SingularA0",
            Error::CountMismatch { .. } => "CountMismatch",
            Error::NumericallySingular { .. } => "NumericallySingular",
            Error::SignConstraintViolated(_) => "SignConstraintViolated",
            Error::RootMultiplicity => "RootMultiplicity",
            Error::ComplexRoots => "ComplexRoots",
            Error::ConfigInvalid(_) => "ConfigInvalid",
            Error::TooFewCycles { .. } => "TooFewCycles",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
