//! Parallel environments and on-policy trajectory collection.

use rand::{Rng, RngCore};
use tending_core::metrics::{CollisionCounting, EpisodeAccumulator, EpisodeMetrics};
use tending_core::observation::build_observation;
use tending_core::reward::compute_rewards;
use tending_core::trace::TraceStep;
use tending_core::{ObservationConfig, RewardConfig, Scenario, ScenarioState, NUM_ACTIONS};
use tending_nn::{Graph, Tensor};

use crate::error::MappoError;
use crate::networks::Policy;
use crate::rng;

/// Shared environment definition for a set of parallel episodes.
#[derive(Debug, Clone)]
pub struct EnvSpec {
    pub scenario: Scenario,
    pub observation: ObservationConfig,
    pub reward: RewardConfig,
    pub counting: CollisionCounting,
}

impl EnvSpec {
    pub fn obs_dim(&self) -> usize {
        self.observation.dim_for(self.scenario.layout())
    }

    pub fn n_agents(&self) -> usize {
        self.scenario.num_agents()
    }

    /// Observations of every agent, row per agent.
    pub fn observe(&self, state: &ScenarioState, out: &mut Vec<f64>) {
        for agent in 0..state.num_agents() {
            out.extend(build_observation(&self.scenario, state, agent, &self.observation).values);
        }
    }
}

/// Reset seed of a numbered episode under a root seed and stream.
pub fn episode_seed(root: u64, stream_id: u64, episode: u64) -> u64 {
    rng::stream(root, stream_id, episode).next_u64()
}

/// One running episode.
#[derive(Debug, Clone)]
pub struct EnvSlot {
    pub episode: u64,
    pub seed: u64,
    pub state: ScenarioState,
    pub accumulator: EpisodeAccumulator,
}

/// Parallel episodes with their recurrent states. Finished or empty slots
/// are reset with the next episode number before they are stepped again.
#[derive(Debug, Clone)]
pub struct VecEnv {
    pub slots: Vec<Option<EnvSlot>>,
    /// `envs * agents x hidden`, env-major.
    pub actor_h: Tensor,
    pub critic_h: Tensor,
    pub root_seed: u64,
    pub seed_stream: u64,
    pub next_episode: u64,
}

/// A finished episode.
#[derive(Debug, Clone, PartialEq)]
pub struct FinishedEpisode {
    pub episode: u64,
    pub seed: u64,
    pub metrics: EpisodeMetrics,
}

impl VecEnv {
    pub fn new(
        num_envs: usize,
        n_agents: usize,
        hidden: usize,
        root_seed: u64,
        seed_stream: u64,
        first_episode: u64,
    ) -> Self {
        Self {
            slots: vec![None; num_envs],
            actor_h: Tensor::zeros(num_envs * n_agents, hidden),
            critic_h: Tensor::zeros(num_envs * n_agents, hidden),
            root_seed,
            seed_stream,
            next_episode: first_episode,
        }
    }

    pub fn num_envs(&self) -> usize {
        self.slots.len()
    }

    fn reset_slot(&mut self, env: usize, spec: &EnvSpec) {
        let episode = self.next_episode;
        self.next_episode += 1;
        let seed = episode_seed(self.root_seed, self.seed_stream, episode);
        let scenario = &spec.scenario;
        self.slots[env] = Some(EnvSlot {
            episode,
            seed,
            state: scenario.reset(seed),
            accumulator: EpisodeAccumulator::new(scenario.num_agents(), scenario.num_machines(), spec.counting),
        });
        let n = scenario.num_agents();
        for h in [&mut self.actor_h, &mut self.critic_h] {
            let cols = h.cols();
            h.data_mut()[env * n * cols..(env + 1) * n * cols].fill(0.0);
        }
    }

    /// Resets every slot that is empty or at the episode horizon.
    pub fn reset_finished(&mut self, spec: &EnvSpec) {
        for env in 0..self.num_envs() {
            let finished = match &self.slots[env] {
                None => true,
                Some(slot) => spec.scenario.is_finished(&slot.state),
            };
            if finished {
                self.reset_slot(env, spec);
            }
        }
    }

    fn state(&self, env: usize) -> &ScenarioState {
        &self.slots[env].as_ref().expect("slot reset before use").state
    }

    /// Observations of all envs, env-major and agent-minor.
    pub fn observations(&self, spec: &EnvSpec) -> Tensor {
        let mut data = Vec::with_capacity(self.num_envs() * spec.n_agents() * spec.obs_dim());
        for env in 0..self.num_envs() {
            spec.observe(self.state(env), &mut data);
        }
        Tensor::new(self.num_envs() * spec.n_agents(), spec.obs_dim(), data).expect("observation length")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionSelection {
    Sample,
    Greedy,
}

/// Row-wise log-softmax of a logits matrix.
pub fn log_softmax(logits: &[f64]) -> [f64; NUM_ACTIONS] {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    let mut out = [0.0; NUM_ACTIONS];
    for (o, l) in out.iter_mut().zip(logits) {
        *o = l - lse;
    }
    out
}

/// Picks an action from log-probabilities. Ties under `Greedy` go to the
/// lowest index.
pub fn select_action(logp: &[f64; NUM_ACTIONS], mode: ActionSelection, rng: &mut impl Rng) -> usize {
    match mode {
        ActionSelection::Greedy => {
            let mut best = 0;
            for a in 1..NUM_ACTIONS {
                if logp[a] > logp[best] {
                    best = a;
                }
            }
            best
        }
        ActionSelection::Sample => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (a, lp) in logp.iter().enumerate() {
                acc += lp.exp();
                if u < acc {
                    return a;
                }
            }
            NUM_ACTIONS - 1
        }
    }
}

/// Actor outputs for one step of every env.
pub struct ActorStep {
    pub logits: Tensor,
    pub h: Tensor,
}

pub fn actor_step(policy: &Policy, obs: &Tensor, h: &Tensor) -> Result<ActorStep, MappoError> {
    let mut g = Graph::new();
    let x = g.input(obs.clone());
    let h0 = g.input(h.clone());
    let (logits, h1) = policy.actor.forward(&mut g, &policy.store, x, h0, 1)?;
    Ok(ActorStep {
        logits: g.value(logits).clone(),
        h: g.value(h1).clone(),
    })
}

/// Critic values (`rows x 1`, in the critic's output space) and next state.
pub fn critic_step(policy: &Policy, obs: &Tensor, h: &Tensor) -> Result<(Tensor, Tensor), MappoError> {
    let mut g = Graph::new();
    let x = g.input(obs.clone());
    let h0 = g.input(h.clone());
    let out = policy.critic.forward(&mut g, &policy.store, x, h0, 1, policy.n_agents)?;
    Ok((g.value(out.values).clone(), g.value(out.h_final).clone()))
}

/// Rollout data for `steps` steps of `num_envs` envs with `n_agents` agents.
///
/// Per-row arrays are indexed `[step][env][agent]`; recurrent states are
/// stored at every chunk start, indexed `[chunk][env][agent][hidden]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    pub num_envs: usize,
    pub n_agents: usize,
    pub steps: usize,
    pub chunk_length: usize,
    pub obs_dim: usize,
    pub hidden: usize,
    pub obs: Vec<f64>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    /// Critic outputs at collection time.
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub reward_components: Vec<[f64; 7]>,
    /// `[step][env]`: the episode ended with this step.
    pub dones: Vec<bool>,
    pub actor_h0: Vec<f64>,
    pub critic_h0: Vec<f64>,
    /// `[env][agent]` critic output for the state after the last step;
    /// zero where the episode ended.
    pub bootstrap: Vec<f64>,
}

impl TrajectoryBatch {
    pub fn rows_per_step(&self) -> usize {
        self.num_envs * self.n_agents
    }

    pub fn index(&self, step: usize, env: usize, agent: usize) -> usize {
        (step * self.num_envs + env) * self.n_agents + agent
    }

    pub fn num_chunks(&self) -> usize {
        self.steps / self.chunk_length
    }

    /// Stored recurrent boundaries per env.
    pub fn boundaries_per_env(&self) -> usize {
        self.actor_h0.len() / (self.num_envs * self.n_agents * self.hidden)
    }

    pub fn h0_range(&self, chunk: usize, env: usize) -> std::ops::Range<usize> {
        let start = (chunk * self.num_envs + env) * self.n_agents * self.hidden;
        start..start + self.n_agents * self.hidden
    }
}

/// Collects `steps` steps from every env. Slots at the horizon are reset
/// first. With `trace` set, every step of env 0 is logged.
#[allow(clippy::too_many_arguments)]
pub fn collect_rollout(
    policy: &Policy,
    spec: &EnvSpec,
    envs: &mut VecEnv,
    steps: usize,
    chunk_length: usize,
    mode: ActionSelection,
    rng: &mut impl Rng,
    finished: &mut Vec<FinishedEpisode>,
) -> Result<TrajectoryBatch, MappoError> {
    let n = spec.n_agents();
    if policy.n_agents != n || policy.obs_dim != spec.obs_dim() {
        return Err(MappoError::Incompatible(format!(
            "policy expects {} agents with {} observation values, environment has {} agents with {}",
            policy.n_agents,
            policy.obs_dim,
            n,
            spec.obs_dim()
        )));
    }
    let num_envs = envs.num_envs();
    let rows = num_envs * n;
    let hidden = policy.hidden_dim();
    let d = spec.obs_dim();
    let total = steps * rows;
    let mut batch = TrajectoryBatch {
        num_envs,
        n_agents: n,
        steps,
        chunk_length,
        obs_dim: d,
        hidden,
        obs: Vec::with_capacity(total * d),
        actions: Vec::with_capacity(total),
        log_probs: Vec::with_capacity(total),
        values: Vec::with_capacity(total),
        rewards: Vec::with_capacity(total),
        reward_components: Vec::with_capacity(total),
        dones: Vec::with_capacity(steps * num_envs),
        actor_h0: Vec::new(),
        critic_h0: Vec::new(),
        bootstrap: vec![0.0; rows],
    };
    for step in 0..steps {
        envs.reset_finished(spec);
        if step % chunk_length == 0 {
            batch.actor_h0.extend_from_slice(envs.actor_h.data());
            batch.critic_h0.extend_from_slice(envs.critic_h.data());
        }
        let obs = envs.observations(spec);
        let act = actor_step(policy, &obs, &envs.actor_h)?;
        let (values, critic_h) = critic_step(policy, &obs, &envs.critic_h)?;
        let mut actions = Vec::with_capacity(rows);
        for r in 0..rows {
            let logp = log_softmax(act.logits.row(r));
            let a = select_action(&logp, mode, rng);
            actions.push(a);
            batch.log_probs.push(logp[a]);
        }
        batch.obs.extend_from_slice(obs.data());
        batch.values.extend_from_slice(values.data());
        batch.actions.extend_from_slice(&actions);
        envs.actor_h = act.h;
        envs.critic_h = critic_h;

        for env in 0..num_envs {
            let slot = envs.slots[env].as_mut().expect("slot reset before use");
            let joint = &actions[env * n..(env + 1) * n];
            let (next, events) = spec.scenario.step(&slot.state, joint)?;
            let rewards = compute_rewards(&spec.scenario, &slot.state, &next, &events, &spec.reward)?;
            slot.accumulator.record(&events, Some(&rewards));
            for r in &rewards.agents {
                batch.rewards.push(r.total);
                batch.reward_components.push(r.components());
            }
            slot.state = next;
            let done = spec.scenario.is_finished(&slot.state);
            batch.dones.push(done);
            if done {
                let cap = spec.scenario.params().parts_per_machine_max();
                finished.push(FinishedEpisode {
                    episode: slot.episode,
                    seed: slot.seed,
                    metrics: slot.accumulator.clone().finish(cap)?,
                });
            }
        }
    }
    let last_done = &batch.dones[(steps - 1) * num_envs..];
    if last_done.iter().any(|d| !d) {
        let obs = envs.observations(spec);
        let (values, _) = critic_step(policy, &obs, &envs.critic_h)?;
        for env in 0..num_envs {
            if !last_done[env] {
                for a in 0..n {
                    batch.bootstrap[env * n + a] = values.get(env * n + a, 0);
                }
            }
        }
    }
    Ok(batch)
}

/// Runs whole greedy episodes numbered `0..episodes`, `num_envs` at a time,
/// with reset seeds from `(seed, stream)`. With `record` set, the steps of
/// episode 0 are returned as trace steps.
pub fn run_episodes(
    policy: &Policy,
    spec: &EnvSpec,
    episodes: usize,
    num_envs: usize,
    seed: u64,
    stream: u64,
    mode: ActionSelection,
    record: bool,
) -> Result<(Vec<FinishedEpisode>, Vec<TraceStep>), MappoError> {
    let mut finished = Vec::with_capacity(episodes);
    let mut trace = Vec::new();
    let mut action_rng = rng::stream(seed, rng::ACTION, u64::MAX >> 24);
    let horizon = spec.scenario.episode_length();
    let mut done = 0;
    while done < episodes {
        let count = num_envs.max(1).min(episodes - done);
        let mut envs = VecEnv::new(count, spec.n_agents(), policy.hidden_dim(), seed, stream, done as u64);
        envs.reset_finished(spec);
        for _ in 0..horizon {
            let obs = envs.observations(spec);
            let act = actor_step(policy, &obs, &envs.actor_h)?;
            envs.actor_h = act.h;
            let n = spec.n_agents();
            for env in 0..count {
                let joint: Vec<usize> = (0..n)
                    .map(|a| select_action(&log_softmax(act.logits.row(env * n + a)), mode, &mut action_rng))
                    .collect();
                let slot = envs.slots[env].as_mut().expect("slot reset before use");
                let (next, events) = spec.scenario.step(&slot.state, &joint)?;
                let rewards = compute_rewards(&spec.scenario, &slot.state, &next, &events, &spec.reward)?;
                slot.accumulator.record(&events, Some(&rewards));
                if record && slot.episode == 0 {
                    trace.push(TraceStep::new(slot.state.t, &joint, &next, &events));
                }
                slot.state = next;
            }
        }
        let cap = spec.scenario.params().parts_per_machine_max();
        for slot in envs.slots.into_iter().flatten() {
            finished.push(FinishedEpisode {
                episode: slot.episode,
                seed: slot.seed,
                metrics: slot.accumulator.finish(cap)?,
            });
        }
        done += count;
    }
    Ok((finished, trace))
}
