//! Actor-critic agent trained with PPO over an enumerated action list.

pub mod network;
pub mod policy;
pub mod ppo;

pub use network::{Adam, Mlp};
pub use policy::{masked_softmax, normalize_state, ActMode, NormBounds, PolicyNetwork};
pub use ppo::{
    ppo_loss, train, AgentConfig, CurvePoint, LearningCurve, TableBandit, TrainingEnv,
    TrainingOutcome,
};
