//! Recurrent actor-critic trained with clipped-surrogate PPO.

pub mod adam;
pub mod buffer;
pub mod config;
pub mod gae;
pub mod loss;
pub mod policy;
pub mod trainer;

pub use adam::{clip_grad_norm, grad_norm, Adam};
pub use buffer::RolloutBuffer;
pub use config::PpoConfig;
pub use gae::gae;
pub use loss::{clamp_log_std, clamp_sigma, gaussian_log_prob, ppo_loss, LossBatch, LossStats, PolicyOutput};
pub use policy::{ObsBatch, PolicyConfig, PolicyNet};
pub use trainer::{evaluate, eval_episode_seed, IterationStats, Trainer, TrainerConfig};
