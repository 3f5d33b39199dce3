//! Training loop, evaluation and checkpoints.
//!
//! Training advances in rounds: a round runs one episode in each of up to
//! `num_envs` parallel envs, split into `episode_length / rollout_length`
//! rollouts with one PPO update after each. Every random draw comes from a
//! stream keyed by the root seed and the update or episode number, so a run
//! resumed from a checkpoint taken between rounds repeats the uninterrupted
//! run exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};
use tending_core::metrics::EpisodeMetrics;
use tending_core::trace::{Trace, TraceHeader};
use tending_core::ObservationConfig;
use tending_nn::{Adam, AdamConfig, Checkpoint, NnError, Tensor};

use crate::config::TrainConfig;
use crate::error::MappoError;
use crate::networks::Policy;
use crate::ppo::{ppo_update, Optimizers, UpdateStats};
use crate::rng;
use crate::rollout::{collect_rollout, run_episodes, ActionSelection, EnvSpec, FinishedEpisode, VecEnv};
use crate::value_norm::ValueNorm;

pub const CHECKPOINT_FORMAT: &str = "tending-mappo";

/// Metadata stored alongside the parameters of a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub seed: u64,
    pub updates: u64,
    pub episodes_done: u64,
    pub train: TrainConfig,
    pub observation: ObservationConfig,
    /// Field names of the observation vector.
    pub schema: Vec<String>,
    pub n_agents: usize,
    pub value_norm: ValueNorm,
}

/// Episodes finished and updates performed in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub episodes: Vec<FinishedEpisode>,
    pub updates: Vec<(u64, UpdateStats)>,
}

#[derive(Debug, Clone)]
pub struct Trainer {
    pub spec: EnvSpec,
    pub config: TrainConfig,
    pub seed: u64,
    pub policy: Policy,
    pub optimizers: Optimizers,
    pub value_norm: ValueNorm,
    pub updates: u64,
    pub episodes_done: u64,
}

fn optimizers(policy: &Policy, config: &TrainConfig) -> Optimizers {
    let adam = |lr| AdamConfig {
        lr,
        ..AdamConfig::default()
    };
    Optimizers {
        actor: Adam::new(&policy.store, policy.actor.params(), adam(config.lr)),
        critic: Adam::new(&policy.store, policy.critic.params(), adam(config.critic_lr)),
    }
}

/// Names the first field where two observation schemas differ.
pub fn schema_mismatch(checkpoint: &[String], config: &[String]) -> Option<String> {
    if checkpoint == config {
        return None;
    }
    let first = checkpoint.iter().zip(config).position(|(a, b)| a != b);
    let detail = match first {
        Some(i) => format!(
            "first difference at index {i}: checkpoint has '{}', configuration has '{}'",
            checkpoint[i], config[i]
        ),
        None if checkpoint.len() > config.len() => {
            format!("checkpoint has extra field '{}'", checkpoint[config.len()])
        }
        None => format!("configuration has extra field '{}'", config[checkpoint.len()]),
    };
    Some(format!(
        "observation dimension {} in checkpoint vs {} in configuration; {detail}",
        checkpoint.len(),
        config.len()
    ))
}

impl Trainer {
    pub fn new(spec: EnvSpec, config: TrainConfig, seed: u64) -> Result<Self, MappoError> {
        let problems = config.validate(spec.scenario.episode_length());
        if !problems.is_empty() {
            return Err(MappoError::InvalidConfig(problems));
        }
        let mut init = rng::stream(seed, rng::INIT, 0);
        let policy = Policy::new(spec.obs_dim(), spec.n_agents(), config.critic, config.network, &mut init);
        let optimizers = optimizers(&policy, &config);
        Ok(Self {
            spec,
            config,
            seed,
            policy,
            optimizers,
            value_norm: ValueNorm::default(),
            updates: 0,
            episodes_done: 0,
        })
    }

    /// Trains one round of at most `max_episodes` episodes.
    pub fn train_round(&mut self, max_episodes: u64) -> Result<RoundReport, MappoError> {
        let count = (self.config.num_envs as u64).min(max_episodes).max(1) as usize;
        let mut envs = VecEnv::new(
            count,
            self.spec.n_agents(),
            self.policy.hidden_dim(),
            self.seed,
            rng::LAYOUT,
            self.episodes_done,
        );
        let rollouts = self.spec.scenario.episode_length() / self.config.rollout_length;
        let mut report = RoundReport {
            episodes: Vec::with_capacity(count),
            updates: Vec::with_capacity(rollouts),
        };
        for _ in 0..rollouts {
            let mut action_rng = rng::stream(self.seed, rng::ACTION, self.updates);
            let batch = collect_rollout(
                &self.policy,
                &self.spec,
                &mut envs,
                self.config.rollout_length,
                self.config.chunk_length,
                ActionSelection::Sample,
                &mut action_rng,
                &mut report.episodes,
            )?;
            let mut shuffle = rng::stream(self.seed, rng::SHUFFLE, self.updates);
            let stats = ppo_update(
                &mut self.policy,
                &mut self.optimizers,
                &mut self.value_norm,
                &batch,
                &self.config,
                self.updates,
                &mut shuffle,
            )?;
            report.updates.push((self.updates, stats));
            self.updates += 1;
        }
        report.episodes.sort_by_key(|e| e.episode);
        self.episodes_done += count as u64;
        Ok(report)
    }

    /// Trains until `total_episodes` episodes have finished, calling
    /// `on_round` after every round.
    pub fn train(
        &mut self,
        total_episodes: u64,
        mut on_round: impl FnMut(&Self, &RoundReport) -> Result<(), MappoError>,
    ) -> Result<(), MappoError> {
        while self.episodes_done < total_episodes {
            let report = self.train_round(total_episodes - self.episodes_done)?;
            on_round(self, &report)?;
        }
        Ok(())
    }

    /// Greedy evaluation episodes with reset seeds from the evaluation stream.
    pub fn evaluate(&self, episodes: usize, seed: u64) -> Result<Vec<EpisodeMetrics>, MappoError> {
        evaluate(&self.policy, &self.spec, episodes, self.config.num_envs, seed)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let meta = CheckpointMeta {
            format: CHECKPOINT_FORMAT.to_string(),
            seed: self.seed,
            updates: self.updates,
            episodes_done: self.episodes_done,
            train: self.config,
            observation: self.spec.observation,
            schema: self.spec.observation.schema(self.spec.scenario.layout()),
            n_agents: self.spec.n_agents(),
            value_norm: self.value_norm,
        };
        let mut ckpt = Checkpoint::new(serde_json::to_value(&meta).expect("metadata serializes"));
        ckpt.push_store("params.", &self.policy.store);
        for (name, t) in self.optimizers.actor.state("adam_actor", &self.policy.store) {
            ckpt.push(name, t);
        }
        for (name, t) in self.optimizers.critic.state("adam_critic", &self.policy.store) {
            ckpt.push(name, t);
        }
        ckpt
    }

    pub fn save(&self, path: &Path) -> Result<(), MappoError> {
        Ok(self.checkpoint().save(path)?)
    }

    /// Restores a trainer. The checkpoint's observation schema and agent
    /// count must match `spec`; `config` replaces the stored training
    /// configuration when given, but its network shape must agree.
    pub fn from_checkpoint(
        ckpt: &Checkpoint,
        spec: EnvSpec,
        config: Option<TrainConfig>,
    ) -> Result<Self, MappoError> {
        let meta = read_meta(ckpt)?;
        check_compatible(&meta, &spec)?;
        let config = config.unwrap_or(meta.train);
        if config.network != meta.train.network || config.critic != meta.train.critic {
            return Err(MappoError::Incompatible(format!(
                "network {:?} / critic {:?} in checkpoint, {:?} / {:?} in configuration",
                meta.train.network, meta.train.critic, config.network, config.critic
            )));
        }
        let mut trainer = Trainer::new(spec, config, meta.seed)?;
        ckpt.load_store("params.", &mut trainer.policy.store)?;
        let lookup = |name: &str| ckpt.get(name).cloned();
        trainer
            .optimizers
            .actor
            .load_state("adam_actor", &trainer.policy.store, &lookup)?;
        trainer
            .optimizers
            .critic
            .load_state("adam_critic", &trainer.policy.store, &lookup)?;
        trainer.value_norm = meta.value_norm;
        trainer.updates = meta.updates;
        trainer.episodes_done = meta.episodes_done;
        Ok(trainer)
    }

    pub fn load(path: &Path, spec: EnvSpec, config: Option<TrainConfig>) -> Result<Self, MappoError> {
        Self::from_checkpoint(&Checkpoint::load(path)?, spec, config)
    }
}

pub fn read_meta(ckpt: &Checkpoint) -> Result<CheckpointMeta, MappoError> {
    let meta: CheckpointMeta = serde_json::from_value(ckpt.metadata.clone())
        .map_err(|e| NnError::Checkpoint(format!("metadata: {e}")))?;
    if meta.format != CHECKPOINT_FORMAT {
        return Err(NnError::Checkpoint(format!("unknown checkpoint format '{}'", meta.format)).into());
    }
    Ok(meta)
}

pub fn check_compatible(meta: &CheckpointMeta, spec: &EnvSpec) -> Result<(), MappoError> {
    let schema = spec.observation.schema(spec.scenario.layout());
    if let Some(msg) = schema_mismatch(&meta.schema, &schema) {
        return Err(MappoError::Incompatible(msg));
    }
    if meta.n_agents != spec.n_agents() {
        return Err(MappoError::Incompatible(format!(
            "{} agents in checkpoint, {} in layout",
            meta.n_agents,
            spec.n_agents()
        )));
    }
    Ok(())
}

/// Policy restored from a checkpoint, for evaluation only.
pub fn load_policy(ckpt: &Checkpoint, spec: &EnvSpec) -> Result<Policy, MappoError> {
    let meta = read_meta(ckpt)?;
    check_compatible(&meta, spec)?;
    let mut init = rng::stream(meta.seed, rng::INIT, 0);
    let mut policy = Policy::new(spec.obs_dim(), spec.n_agents(), meta.train.critic, meta.train.network, &mut init);
    ckpt.load_store("params.", &mut policy.store)?;
    Ok(policy)
}

/// Greedy (argmax) episodes `0..episodes` with reset seeds from `seed`.
pub fn evaluate(
    policy: &Policy,
    spec: &EnvSpec,
    episodes: usize,
    num_envs: usize,
    seed: u64,
) -> Result<Vec<EpisodeMetrics>, MappoError> {
    let (finished, _) = run_episodes(policy, spec, episodes, num_envs, seed, rng::EVAL, ActionSelection::Greedy, false)?;
    Ok(finished.into_iter().map(|f| f.metrics).collect())
}

/// One greedy evaluation episode as a replayable trace.
pub fn record_trace(policy: &Policy, spec: &EnvSpec, seed: u64) -> Result<Trace, MappoError> {
    let (finished, steps) = run_episodes(policy, spec, 1, 1, seed, rng::EVAL, ActionSelection::Greedy, true)?;
    Ok(Trace {
        header: Some(TraceHeader {
            layout: spec.scenario.layout().clone(),
            params: *spec.scenario.params(),
            seed: finished[0].seed,
        }),
        steps,
    })
}

/// Zero-initialized recurrent state for `rows` rows.
pub fn zero_state(policy: &Policy, rows: usize) -> Tensor {
    Tensor::zeros(rows, policy.hidden_dim())
}
