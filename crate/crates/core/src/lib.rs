//! Finite-agent offset-credit market and a Nash-DQN approximation of its equilibrium.
//!
//! The crate is organised as:
//! - [`market`]: the environment (price bridge, penalties, rewards);
//! - [`nets`]: class networks, Nash heads, Adam, checkpoints;
//! - [`trainer`]: the training loop;
//! - [`evaluation`]: path simulation, statistics, CSV reports;
//! - [`oracle`]: backward-induction validators on small games;
//! - [`cli`]: the `ocnash` command.

pub mod cli;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod market;
pub mod nets;
pub mod oracle;
pub mod presets;
pub mod stats;
pub mod store;
pub mod trainer;

pub use config::ExperimentConfig;
pub use error::{ConfigError, EvalError, MarketError, NetError, OracleError, TrainError};
pub use market::{AgentClass, JointAction, Market, MarketConfig, MarketState};
pub use nets::{Checkpoint, NashModel, NetConfig};
pub use trainer::{TrainConfig, Trainer};
