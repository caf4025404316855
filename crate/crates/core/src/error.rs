use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid word ({alpha}, {beta}) for n_c = {n_c}, s_c = {s_c}")]
    InvalidWord {
        alpha: usize,
        beta: usize,
        n_c: usize,
        s_c: usize,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("layer norm input has (near) zero variance")]
    DegenerateInput,
    #[error("training diverged at epoch {epoch}: risk {risk} exceeds 10x initial risk {initial}")]
    Diverged { epoch: usize, risk: f64, initial: f64 },
    #[error("uniqueness bound fails: lambda^2 = {lhs} is not below {rhs}")]
    NoGuarantee { lhs: f64, rhs: f64 },
    #[error("enumeration budget exceeded: {needed} > {budget}")]
    BudgetExceeded { needed: u128, budget: u128 },
}

pub type Result<T> = std::result::Result<T, Error>;
