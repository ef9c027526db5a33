use thiserror::Error;

/// Errors raised while validating configuration or stepping the market.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarketError {
    #[error("invalid market config: {0}")]
    InvalidConfig(String),
    #[error("grid index {index} out of range (K = {num_steps})")]
    IndexOutOfRange { index: usize, num_steps: usize },
    #[error("cannot step from terminal state k = {0}")]
    TerminalState(usize),
    #[error("dimension mismatch: expected {expected} agents, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid action for agent {agent}: {reason}")]
    InvalidAction { agent: usize, reason: String },
}

/// Errors from the network, optimizer, and checkpoint layer.
#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("non-finite gradient at parameter {0}")]
    NonFiniteGradient(usize),
    #[error("non-finite parameter at index {0}")]
    NonFiniteParameter(usize),
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Training loop failures.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Oracle failures.
#[derive(Debug, Error)]
pub enum OracleError {
    #[error("enumeration budget exceeded: {needed} > {budget}")]
    BudgetExceeded { needed: usize, budget: usize },
    #[error("no pure grid Nash equilibrium at stage {stage}, node {node}")]
    NoPureNash { stage: usize, node: usize },
    #[error("invalid oracle setup: {0}")]
    InvalidGame(String),
    #[error("grid too coarse: value moved {delta} between refinements (tolerance {tolerance})")]
    GridTooCoarse { delta: f64, tolerance: f64 },
    #[error(transparent)]
    Market(#[from] MarketError),
}

/// Experiment configuration failures.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("bad override {0:?}: {1}")]
    Override(String, String),
    #[error("config parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Simulation and reporting failures.
#[derive(Debug, Error)]
pub enum EvalError {
    #[error("policy/market mismatch: {0}")]
    Mismatch(String),
    #[error("ensemble has no paths")]
    Empty,
    #[error("path file format error: {0}")]
    Format(String),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
