use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(&'static str),
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("value outside its domain: {0}")]
    Domain(&'static str),
    #[error("fixed-point iteration did not contract (spectral radius >= 1?)")]
    NonContractive,
    #[error("matrix is not positive semidefinite (eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("matrix is singular")]
    Singular,
    #[error("iteration did not converge")]
    NoConvergence,
    #[error("sample set is empty")]
    EmptySampleSet,
    #[error("Wasserstein radius infeasible: theta * lambda_min = {budget} exceeds epsilon = {epsilon}")]
    InfeasibleRadius { budget: f64, epsilon: f64 },
    #[error("risk allocation sums to {total}, exceeding 1 - p = {limit}")]
    Allocation { total: f64, limit: f64 },
    #[error("malformed QP: {0}")]
    BadProblem(&'static str),
    #[error("tightened constraint set is empty")]
    TightenedSetEmpty,
    #[error("MPC problem is infeasible at the initial state")]
    InitialInfeasible,
}
