use thiserror::Error;

/// Errors raised while building problem instances, running the solver, or
/// persisting experiment artifacts.
#[derive(Debug, Error)]
pub enum Error {
    #[error("agent {agent} is out of range for a network of {agents} agents")]
    AgentOutOfRange { agent: usize, agents: usize },

    #[error("sub-network {constraint} over agents {members:?} is not connected")]
    DisconnectedSubnetwork {
        constraint: usize,
        members: Vec<usize>,
    },

    #[error("the network is not connected")]
    DisconnectedNetwork,

    #[error(
        "no connected geometric network after {attempts} samples (agents = {agents}, radius = {radius})"
    )]
    ConnectivityNotAchieved {
        agents: usize,
        radius: f64,
        attempts: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("constraint {0} has no participating agents")]
    EmptyConstraint(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("strong convexity modulus is zero; step-size limits are unavailable")]
    NotStronglyConvex,

    #[error("divergence detected at round {round}: {diagnostic}")]
    Divergence { round: usize, diagnostic: String },

    #[error(
        "oracle stopped after {iterations} iterations with residual {achieved:e} (target {target:e})"
    )]
    NoConvergence {
        iterations: usize,
        achieved: f64,
        target: f64,
    },

    #[error("oracle {0} is not applicable: {1}")]
    OracleNotApplicable(&'static str, String),

    #[error("variants do not refer to the same underlying instance: {0}")]
    MismatchedVariants(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
