use tending_core::metrics::MetricsError;
use tending_core::trace::TraceError;
use tending_core::{RewardError, ScenarioError};
use tending_nn::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MappoError {
    #[error("invalid training configuration:\n  - {}", .0.join("\n  - "))]
    InvalidConfig(Vec<String>),
    #[error("non-finite value at update {update}: {detail}")]
    NonFinite { update: u64, detail: String },
    #[error("checkpoint does not match the configuration: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Gae(#[from] crate::gae::GaeLengthError),
}
