//! Clipped-surrogate policy and value updates over recurrent chunks.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use tending_nn::{clip_grad_norm, Adam, Graph, NnError, NodeId, ParamStore, Tensor};

use crate::config::TrainConfig;
use crate::error::MappoError;
use crate::gae::compute_gae;
use crate::networks::{Actor, Critic, Policy};
use crate::rollout::TrajectoryBatch;
use crate::value_norm::ValueNorm;

/// Training rows for a set of sequences, time-major: row
/// `(t * units + u) * n_agents + a` is step `t` of sequence `u` for agent `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct Minibatch {
    pub steps: usize,
    pub units: usize,
    pub n_agents: usize,
    pub obs: Tensor,
    pub actions: Vec<usize>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub old_values: Vec<f64>,
    pub targets: Vec<f64>,
    pub actor_h0: Tensor,
    pub critic_h0: Tensor,
}

impl Minibatch {
    pub fn rows(&self) -> usize {
        self.steps * self.units * self.n_agents
    }

    /// Rescales advantages to zero mean and unit (population) deviation.
    pub fn normalize_advantages(&mut self) {
        let n = self.advantages.len() as f64;
        let mean = self.advantages.iter().sum::<f64>() / n;
        let var = self.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        for a in &mut self.advantages {
            *a = (*a - mean) / (std + 1e-8);
        }
    }
}

/// Advantages, raw returns and value targets for every batch row.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

/// GAE per env and agent. `denorm` maps critic outputs to return units.
pub fn batch_targets(
    batch: &TrajectoryBatch,
    gamma: f64,
    lambda: f64,
    denorm: impl Fn(f64) -> f64,
) -> Result<Targets, MappoError> {
    let total = batch.steps * batch.rows_per_step();
    let mut advantages = vec![0.0; total];
    let mut returns = vec![0.0; total];
    let mut rewards = vec![0.0; batch.steps];
    let mut values = vec![0.0; batch.steps];
    let mut dones = vec![false; batch.steps];
    for env in 0..batch.num_envs {
        for agent in 0..batch.n_agents {
            for t in 0..batch.steps {
                let i = batch.index(t, env, agent);
                rewards[t] = batch.rewards[i];
                values[t] = denorm(batch.values[i]);
                dones[t] = batch.dones[t * batch.num_envs + env];
            }
            let last_done = dones[batch.steps - 1];
            let bootstrap = if last_done {
                0.0
            } else {
                denorm(batch.bootstrap[env * batch.n_agents + agent])
            };
            let (adv, ret) = compute_gae(&rewards, &values, &dones, bootstrap, gamma, lambda)?;
            for t in 0..batch.steps {
                let i = batch.index(t, env, agent);
                advantages[i] = adv[t];
                returns[i] = ret[t];
            }
        }
    }
    Ok(Targets { advantages, returns })
}

/// Gathers the sequences `units` (each `env * chunks + chunk`) into
/// time-major training rows. `targets` are in the critic's output space.
pub fn build_minibatch(batch: &TrajectoryBatch, advantages: &[f64], targets: &[f64], units: &[usize]) -> Minibatch {
    let (n, d, h, len) = (batch.n_agents, batch.obs_dim, batch.hidden, batch.chunk_length);
    let chunks = batch.num_chunks();
    let rows = len * units.len() * n;
    let mut obs = Vec::with_capacity(rows * d);
    let mut actions = Vec::with_capacity(rows);
    let mut old_log_probs = Vec::with_capacity(rows);
    let mut adv = Vec::with_capacity(rows);
    let mut old_values = Vec::with_capacity(rows);
    let mut tgt = Vec::with_capacity(rows);
    for t in 0..len {
        for &u in units {
            let (env, chunk) = (u / chunks, u % chunks);
            let step = chunk * len + t;
            for a in 0..n {
                let i = batch.index(step, env, a);
                obs.extend_from_slice(&batch.obs[i * d..(i + 1) * d]);
                actions.push(batch.actions[i]);
                old_log_probs.push(batch.log_probs[i]);
                adv.push(advantages[i]);
                old_values.push(batch.values[i]);
                tgt.push(targets[i]);
            }
        }
    }
    let mut actor_h0 = Vec::with_capacity(units.len() * n * h);
    let mut critic_h0 = Vec::with_capacity(units.len() * n * h);
    for &u in units {
        let r = batch.h0_range(u % chunks, u / chunks);
        actor_h0.extend_from_slice(&batch.actor_h0[r.clone()]);
        critic_h0.extend_from_slice(&batch.critic_h0[r]);
    }
    Minibatch {
        steps: len,
        units: units.len(),
        n_agents: n,
        obs: Tensor::new(rows, d, obs).expect("minibatch observation length"),
        actions,
        old_log_probs,
        advantages: adv,
        old_values,
        targets: tgt,
        actor_h0: Tensor::new(units.len() * n, h, actor_h0).expect("actor state length"),
        critic_h0: Tensor::new(units.len() * n, h, critic_h0).expect("critic state length"),
    }
}

/// Nodes of the actor objective.
#[derive(Debug, Clone, Copy)]
pub struct ActorLoss {
    pub loss: NodeId,
    pub surrogate: NodeId,
    pub entropy: NodeId,
    pub log_probs: NodeId,
    pub ratio: NodeId,
}

/// `-mean(min(r A, clip(r, 1-eps, 1+eps) A)) - c_H * mean entropy`.
pub fn actor_loss(
    g: &mut Graph,
    store: &ParamStore,
    actor: &Actor,
    mb: &Minibatch,
    clip: f64,
    entropy_coef: f64,
) -> Result<ActorLoss, NnError> {
    let x = g.input(mb.obs.clone());
    let h0 = g.input(mb.actor_h0.clone());
    let (logits, _) = actor.forward(g, store, x, h0, mb.steps)?;
    let logp_all = g.log_softmax_rows(logits);
    let log_probs = g.pick_cols(logp_all, &mb.actions)?;
    let rows = mb.rows();
    let old = g.input(Tensor::new(rows, 1, mb.old_log_probs.clone())?);
    let adv = g.input(Tensor::new(rows, 1, mb.advantages.clone())?);
    let diff = g.sub(log_probs, old)?;
    let ratio = g.exp(diff);
    let unclipped = g.mul(ratio, adv)?;
    let clipped_ratio = g.clamp(ratio, 1.0 - clip, 1.0 + clip);
    let clipped = g.mul(clipped_ratio, adv)?;
    let surr = g.minimum(unclipped, clipped)?;
    let surrogate = g.mean_all(surr);
    let probs = g.exp(logp_all);
    let plogp = g.mul(probs, logp_all)?;
    let neg_ent = g.sum_all(plogp);
    let entropy = g.scale(neg_ent, -1.0 / rows as f64);
    let a = g.scale(surrogate, -1.0);
    let b = g.scale(entropy, -entropy_coef);
    let loss = g.add(a, b)?;
    Ok(ActorLoss {
        loss,
        surrogate,
        entropy,
        log_probs,
        ratio,
    })
}

/// `value_coef * mean(0.5 * max((v - y)^2, (v_clip - y)^2))` with
/// `v_clip = v_old + clip(v - v_old, -eps, eps)`.
pub fn critic_loss(
    g: &mut Graph,
    store: &ParamStore,
    critic: &Critic,
    mb: &Minibatch,
    clip: f64,
    value_coef: f64,
) -> Result<NodeId, NnError> {
    let x = g.input(mb.obs.clone());
    let h0 = g.input(mb.critic_h0.clone());
    let v = critic.forward(g, store, x, h0, mb.steps, mb.n_agents)?.values;
    let rows = mb.rows();
    let old = g.input(Tensor::new(rows, 1, mb.old_values.clone())?);
    let y = g.input(Tensor::new(rows, 1, mb.targets.clone())?);
    let delta = g.sub(v, old)?;
    let delta = g.clamp(delta, -clip, clip);
    let v_clip = g.add(old, delta)?;
    let e1 = g.sub(v, y)?;
    let e1 = g.square(e1);
    let e2 = g.sub(v_clip, y)?;
    let e2 = g.square(e2);
    let worst = g.maximum(e1, e2)?;
    let mean = g.mean_all(worst);
    Ok(g.scale(mean, 0.5 * value_coef))
}

/// Averages over all minibatch passes of one update.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub ratio_mean: f64,
    pub actor_grad_norm: f64,
    pub critic_grad_norm: f64,
    pub mean_return: f64,
}

/// Optimizer state for one policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizers {
    pub actor: Adam,
    pub critic: Adam,
}

/// Runs the configured epochs of minibatch updates on one batch.
pub fn ppo_update(
    policy: &mut Policy,
    opt: &mut Optimizers,
    value_norm: &mut ValueNorm,
    batch: &TrajectoryBatch,
    config: &TrainConfig,
    update: u64,
    rng: &mut impl Rng,
) -> Result<UpdateStats, MappoError> {
    let normalize = config.value_normalization;
    let frozen = *value_norm;
    let t = batch_targets(batch, config.gamma, config.gae_lambda, |v| {
        if normalize {
            frozen.denormalize(v)
        } else {
            v
        }
    })?;
    if normalize {
        value_norm.update(&t.returns);
    }
    let targets: Vec<f64> = if normalize {
        t.returns.iter().map(|&r| value_norm.normalize(r)).collect()
    } else {
        t.returns.clone()
    };

    let units = batch.num_envs * batch.num_chunks();
    let per_mb = units.div_ceil(config.minibatches);
    let mut order: Vec<usize> = (0..units).collect();
    let mut stats = UpdateStats {
        mean_return: t.returns.iter().sum::<f64>() / t.returns.len() as f64,
        ..UpdateStats::default()
    };
    let mut passes = 0usize;
    let actor_ids = policy.actor.params();
    let critic_ids = policy.critic.params();
    for _ in 0..config.ppo_epochs {
        order.shuffle(rng);
        for units in order.chunks(per_mb) {
            let mut mb = build_minibatch(batch, &t.advantages, &targets, units);
            mb.normalize_advantages();

            policy.store.zero_grads();
            let mut g = Graph::new();
            let nodes = actor_loss(&mut g, &policy.store, &policy.actor, &mb, config.clip, config.entropy_coef)?;
            let loss = g.value(nodes.loss).item();
            if !loss.is_finite() {
                return Err(non_finite(update, "actor loss", loss, &g, &nodes));
            }
            g.backward(nodes.loss)?;
            g.accumulate_param_grads(&mut policy.store);
            let actor_norm = clip_grad_norm(&mut policy.store, &actor_ids, config.max_grad_norm);
            let ratio = g.value(nodes.ratio);
            let rows = ratio.len() as f64;
            stats.actor_loss += loss;
            stats.entropy += g.value(nodes.entropy).item();
            stats.ratio_mean += ratio.data().iter().sum::<f64>() / rows;
            stats.clip_fraction +=
                ratio.data().iter().filter(|r| (*r - 1.0).abs() > config.clip).count() as f64 / rows;
            let new_logp = g.value(nodes.log_probs).data();
            stats.approx_kl +=
                mb.old_log_probs.iter().zip(new_logp).map(|(o, n)| o - n).sum::<f64>() / rows;
            drop(g);

            let mut g = Graph::new();
            let closs = critic_loss(&mut g, &policy.store, &policy.critic, &mb, config.clip, config.value_coef)?;
            let closs_value = g.value(closs).item();
            if !closs_value.is_finite() {
                return Err(MappoError::NonFinite {
                    update,
                    detail: format!("critic loss = {closs_value}, mean target = {}", mean(&mb.targets)),
                });
            }
            g.backward(closs)?;
            g.accumulate_param_grads(&mut policy.store);
            let critic_norm = clip_grad_norm(&mut policy.store, &critic_ids, config.max_grad_norm);
            if !actor_norm.is_finite() || !critic_norm.is_finite() {
                return Err(MappoError::NonFinite {
                    update,
                    detail: format!("gradient norms actor = {actor_norm}, critic = {critic_norm}"),
                });
            }
            opt.actor.step(&mut policy.store);
            opt.critic.step(&mut policy.store);
            if !policy.store.all_finite() {
                let bad: Vec<&str> = policy
                    .store
                    .iter()
                    .filter(|(_, p)| !p.value.is_finite())
                    .map(|(_, p)| p.name.as_str())
                    .collect();
                return Err(MappoError::NonFinite {
                    update,
                    detail: format!("parameters after step: {}", bad.join(", ")),
                });
            }
            stats.critic_loss += closs_value;
            stats.actor_grad_norm += actor_norm;
            stats.critic_grad_norm += critic_norm;
            passes += 1;
        }
    }
    let k = passes.max(1) as f64;
    for v in [
        &mut stats.actor_loss,
        &mut stats.critic_loss,
        &mut stats.entropy,
        &mut stats.approx_kl,
        &mut stats.clip_fraction,
        &mut stats.ratio_mean,
        &mut stats.actor_grad_norm,
        &mut stats.critic_grad_norm,
    ] {
        *v /= k;
    }
    Ok(stats)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn non_finite(update: u64, what: &str, value: f64, g: &Graph, nodes: &ActorLoss) -> MappoError {
    let ratio = g.value(nodes.ratio);
    let max_ratio = ratio.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    MappoError::NonFinite {
        update,
        detail: format!(
            "{what} = {value}; surrogate = {}, entropy = {}, max ratio = {max_ratio}",
            g.value(nodes.surrogate).item(),
            g.value(nodes.entropy).item()
        ),
    }
}
