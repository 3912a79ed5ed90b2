//! Episodic control tasks built on the dynamics layer.

mod episode;
mod spec;

pub use episode::{
    env_step, reset, rollout, Action, ConstantPolicy, EnvInstance, EpisodeLog, FnPolicy, Policy,
    RandomPolicy, Transition,
};
pub(crate) use episode::dynamics_step;
pub use spec::{ActionSet, EnvName, EnvSpec, RewardKind, System};
