use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    /// Every sensor combination is inconsistent with the data window. Either
    /// more sensors are corrupted than the assumed budget, or the residual
    /// tolerance is too tight for the measurement noise.
    #[error("attack model violated: no sensor combination is consistent with the data")]
    AttackModelViolated,
    /// An affine solution entry fails the online kernel condition, so the
    /// barrier constraint value is not invariant over the subspace.
    #[error("online kernel condition violated: safety cannot be certified")]
    KernelConditionViolated,
    /// The safety program has no solution this step.
    #[error("safety program infeasible: no input satisfies the barrier constraints")]
    Infeasible,
    #[error("solver failure: {0}")]
    SolverFailure(String),
}

pub type Result<T> = std::result::Result<T, Error>;
