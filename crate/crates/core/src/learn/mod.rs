//! Policy learning: MLPs with hand-written gradients, GAE and PPO.
//!
//! The actor maps a stacked observation to the mean of a Gaussian over
//! normalized actions; exploration is its fixed standard deviation, annealed
//! linearly over epochs. Actor and critic share no parameters.

pub mod checkpoint;
pub mod gae;
pub mod nn;
pub mod policy;
pub mod ppo;
pub mod rollout;
pub mod train;

pub use checkpoint::Checkpoint;
pub use gae::gae;
pub use nn::{Activation, Adam, Mlp};
pub use policy::{forward_policy, CriticNet, ObsNorm, PolicyNet, PolicySample};
pub use ppo::{ppo_update, PpoConfig, PpoStats, RolloutBatch};
pub use rollout::{collect_batch, run_episode, EpisodeOutcome, Worker};
pub use train::{train, EpochStats, TrainConfig, TrainOutput};
