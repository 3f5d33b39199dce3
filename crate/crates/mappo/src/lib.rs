//! Multi-agent PPO for the machine-tending scenario.
//!
//! Agents share one recurrent actor that sees only its own observation. The
//! centralized critic sees every agent's observation and produces one value
//! per agent, either through a plain MLP + GRU or through a shared encoder
//! and multi-head attention across agents ([`CriticVariant`]).

pub mod config;
pub mod error;
pub mod gae;
pub mod networks;
pub mod ppo;
pub mod rng;
pub mod rollout;
pub mod trainer;
pub mod value_norm;

pub use config::{CriticVariant, NetworkConfig, TrainConfig};
pub use error::MappoError;
pub use gae::compute_gae;
pub use networks::{Actor, Critic, Policy};
pub use ppo::UpdateStats;
pub use rollout::{ActionSelection, EnvSpec, FinishedEpisode, TrajectoryBatch, VecEnv};
pub use trainer::{evaluate, load_policy, record_trace, CheckpointMeta, RoundReport, Trainer};
pub use value_norm::ValueNorm;
