use thiserror::Error;

/// Errors produced by the allocation solvers and oracles.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    /// A user cannot complete offloading within its deadline.
    #[error("user {user} cannot offload: effective latency {latency} s is not positive")]
    InfeasibleUser { user: usize, latency: f64 },

    /// The instance as a whole admits no feasible allocation.
    #[error("infeasible instance: {0}")]
    Infeasible(String),

    /// Aggregate rate is so large that powers would exceed double range.
    #[error("aggregate rate {sum_rate:.3} bits/channel-use exceeds the representable domain")]
    OverflowDomain { sum_rate: f64 },

    /// Interior-point iteration budget exhausted before convergence.
    #[error("solver stalled after {iterations} iterations")]
    SolverStall { iterations: usize },

    /// Offload fraction left [0,1] by more than roundoff.
    #[error("offload fraction {gamma} is outside [0,1]")]
    OutOfBracket { gamma: f64 },

    /// A descent step increased the objective; indicates an implementation bug.
    #[error("objective increased by {increase:.3e} during a descent step")]
    NonMonotone { increase: f64 },

    /// Instance exceeds a hard enumeration guard.
    #[error("problem too large: {0}")]
    TooLarge(String),

    /// Every candidate vertex system was singular.
    #[error("degenerate vertex enumeration: no solvable candidate system")]
    Degenerate,

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, SolveError>;
