use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("state space has {states} states, exceeding the limit of {limit}")]
    StateSpaceTooLarge { states: u128, limit: u128 },

    #[error("action {action} is infeasible in state {state}")]
    InfeasibleAction { action: String, state: String },

    #[error("relative value iteration did not converge after {sweeps} sweeps (span {span:e})")]
    NotConverged { sweeps: usize, span: f64 },

    #[error("policy evaluation did not converge after {iterations} iterations (residual {residual:e})")]
    EvaluationNotConverged { iterations: usize, residual: f64 },

    #[error("instance too large for brute force: {states} states, {actions} actions")]
    OracleTooLarge { states: usize, actions: usize },

    #[error("out of scope: {0}")]
    Scope(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}
