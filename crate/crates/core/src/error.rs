use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("Unbalanced instance: total supply {supply} differs from total demand {demand}")]
    Unbalanced { supply: f64, demand: f64 },

    #[error("NegativeEntry: {vector}[{index}] = {value} is negative")]
    NegativeEntry {
        vector: &'static str,
        index: usize,
        value: f64,
    },

    #[error("ShapeMismatch: {what} has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        what: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("EmptyInstance: need at least one supplier and one destination (got {m}x{n})")]
    EmptyInstance { m: usize, n: usize },

    #[error("InvalidParameter: {0}")]
    InvalidParameter(String),

    #[error("IndexOutOfRange: route ({i}, {j}) outside {m}x{n}")]
    IndexOutOfRange { i: usize, j: usize, m: usize, n: usize },

    #[error("NonFiniteState: dual variables became non-finite after sweep {sweep}")]
    NonFiniteState { sweep: usize },

    #[error(
        "DescentViolation: objective rose from {previous} to {current} at outer iteration {iteration}"
    )]
    DescentViolation {
        iteration: usize,
        previous: f64,
        current: f64,
    },

    #[error("TooManyDegreesOfFreedom: oracle handles at most 2 free variables, instance has {dof}")]
    TooManyDegreesOfFreedom { dof: usize },

    #[error("InfeasibleParametrization: no grid point satisfies the transport constraints")]
    InfeasibleParametrization,
}
