//! Training hyperparameters.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticVariant {
    /// MLP + GRU over the agent's own observation and every agent's observation.
    Plain,
    /// Shared encoder, multi-head attention across agents, then MLP + GRU.
    #[default]
    Attention,
}

/// Layer sizes. None of these are fixed by the method; all are defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub hidden_dim: usize,
    /// Fully connected layers before the GRU, each followed by tanh and layer norm.
    pub actor_layers: usize,
    pub critic_layers: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    /// Concatenate all agents' observations after the attention block
    /// instead of only the evaluated agent's own observation.
    pub concat_all_observations: bool,
    /// Gain of the orthogonal init of the action head.
    pub actor_head_gain: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 64,
            actor_layers: 1,
            critic_layers: 1,
            embed_dim: 64,
            heads: 3,
            head_dim: 64,
            concat_all_observations: false,
            actor_head_gain: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub ppo_epochs: usize,
    pub minibatches: usize,
    /// Steps per recurrent training sequence.
    pub chunk_length: usize,
    /// Steps collected per env between updates; divides the episode length.
    pub rollout_length: usize,
    pub lr: f64,
    pub critic_lr: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub num_envs: usize,
    /// Track running return statistics and regress the critic on normalized targets.
    pub value_normalization: bool,
    pub critic: CriticVariant,
    pub network: NetworkConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip: 0.2,
            ppo_epochs: 5,
            minibatches: 2,
            chunk_length: 10,
            rollout_length: 50,
            lr: 5e-4,
            critic_lr: 5e-4,
            value_coef: 0.5,
            entropy_coef: 0.01,
            max_grad_norm: 10.0,
            num_envs: 16,
            value_normalization: true,
            critic: CriticVariant::Attention,
            network: NetworkConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Every violated constraint, given the episode length it will run with.
    pub fn validate(&self, episode_length: usize) -> Vec<String> {
        let mut problems = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                problems.push(msg);
            }
        };
        check((0.0..=1.0).contains(&self.gamma), format!("train.gamma must be in [0, 1], got {}", self.gamma));
        check(
            (0.0..=1.0).contains(&self.gae_lambda),
            format!("train.gae_lambda must be in [0, 1], got {}", self.gae_lambda),
        );
        check(self.clip > 0.0, format!("train.clip must be > 0, got {}", self.clip));
        check(self.ppo_epochs > 0, "train.ppo_epochs must be > 0".to_string());
        check(self.minibatches > 0, "train.minibatches must be > 0".to_string());
        check(self.num_envs > 0, "train.num_envs must be > 0".to_string());
        check(self.lr >= 0.0 && self.lr.is_finite(), format!("train.lr must be >= 0, got {}", self.lr));
        check(
            self.critic_lr >= 0.0 && self.critic_lr.is_finite(),
            format!("train.critic_lr must be >= 0, got {}", self.critic_lr),
        );
        check(self.max_grad_norm > 0.0, "train.max_grad_norm must be > 0".to_string());
        check(self.chunk_length > 0, "train.chunk_length must be > 0".to_string());
        check(
            self.chunk_length > 0 && self.rollout_length % self.chunk_length == 0,
            format!(
                "train.rollout_length ({}) must be a multiple of train.chunk_length ({})",
                self.rollout_length, self.chunk_length
            ),
        );
        check(
            self.rollout_length > 0 && episode_length % self.rollout_length == 0,
            format!(
                "train.rollout_length ({}) must divide the episode length ({episode_length})",
                self.rollout_length
            ),
        );
        let chunks = if self.chunk_length > 0 { self.rollout_length / self.chunk_length } else { 0 };
        check(
            self.minibatches <= self.num_envs * chunks.max(1),
            format!(
                "train.minibatches ({}) exceeds the {} sequences per rollout",
                self.minibatches,
                self.num_envs * chunks
            ),
        );
        let n = &self.network;
        check(n.hidden_dim > 0 && n.embed_dim > 0 && n.head_dim > 0, "network sizes must be > 0".to_string());
        check(n.heads > 0, "network.heads must be > 0".to_string());
        problems
    }
}
