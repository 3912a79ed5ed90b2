//! DQN, QRDQN and PPO learners.

mod config;
mod exploration;
mod policy;
pub mod ppo;
pub mod qnet;
pub mod quantile;
mod replay;
mod train;

pub use config::{AgentConfig, AgentKind, PpoConfig};
pub use exploration::{argmax_lowest, epsilon_at, epsilon_greedy};
pub use policy::{
    sample_categorical, softmax, ActionValues, GaussianActor, GreedyPolicy, SoftmaxPolicy, ValueNet,
};
pub use ppo::{ppo_update, GaussianPolicyOut, PpoLosses, Rollout};
pub use qnet::{
    dqn_loss_and_grad, dqn_td_target, dqn_update, qrdqn_loss_and_grad, qrdqn_target_samples,
    qrdqn_update, MeanHead,
};
pub use quantile::{quantile_huber_loss, QuantileDistribution};
pub use replay::{Batch, ReplayBuffer};
pub use train::{train, AgentMeta, EpisodeRecord, LoadedAgent, TrainOutcome, TRAIN_LOG_HEADER};
