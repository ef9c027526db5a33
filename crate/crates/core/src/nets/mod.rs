//! Function approximators for the Nash-DQN heads.

pub mod checkpoint;
pub mod features;
pub mod heads;
pub mod linalg;
pub mod mlp;
pub mod model;
pub mod optim;

pub use checkpoint::Checkpoint;
pub use features::FeatureEncoder;
pub use heads::{advantage, q_value, HeadLayout, HeadScales, NashHeads};
pub use mlp::{Activation, Mlp};
pub use model::{nash_action_of, NashModel, NetConfig};
pub use optim::{adam_step, grad_check, soft_update, AdamState, GradCheckReport};
