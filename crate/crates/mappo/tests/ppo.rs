//! Surrogate clipping, update invariants and rollout bookkeeping.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tending_core::metrics::CollisionCounting;
use tending_core::scenario::ScenarioParams;
use tending_core::{LayoutSpec, ObservationConfig, RewardConfig, Scenario};
use tending_mappo::ppo::{actor_loss, build_minibatch, ppo_update, Minibatch, Optimizers};
use tending_mappo::rollout::collect_rollout;
use tending_mappo::{ActionSelection, CriticVariant, EnvSpec, NetworkConfig, Policy, TrainConfig, TrajectoryBatch, ValueNorm, VecEnv};
use tending_nn::{Adam, AdamConfig, Graph, Tensor};

fn spec(episode_length: usize) -> EnvSpec {
    let params = ScenarioParams {
        episode_length,
        ..ScenarioParams::default()
    };
    EnvSpec {
        scenario: Scenario::new(LayoutSpec::default(), params).unwrap(),
        observation: ObservationConfig::default(),
        reward: RewardConfig::default(),
        counting: CollisionCounting::PerAgent,
    }
}

fn config() -> TrainConfig {
    TrainConfig {
        num_envs: 2,
        rollout_length: 20,
        chunk_length: 10,
        ppo_epochs: 2,
        network: NetworkConfig {
            hidden_dim: 8,
            embed_dim: 8,
            head_dim: 4,
            ..NetworkConfig::default()
        },
        ..TrainConfig::default()
    }
}

fn policy(spec: &EnvSpec, cfg: &TrainConfig, seed: u64) -> Policy {
    Policy::new(
        spec.obs_dim(),
        spec.n_agents(),
        cfg.critic,
        cfg.network,
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
}

fn rollout(policy: &Policy, spec: &EnvSpec, cfg: &TrainConfig, steps: usize, mode: ActionSelection, seed: u64) -> TrajectoryBatch {
    let mut envs = VecEnv::new(cfg.num_envs, spec.n_agents(), policy.hidden_dim(), seed, 2, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    collect_rollout(policy, spec, &mut envs, steps, cfg.chunk_length, mode, &mut rng, &mut Vec::new()).unwrap()
}

fn optimizers(policy: &Policy, lr: f64) -> Optimizers {
    let c = AdamConfig {
        lr,
        ..AdamConfig::default()
    };
    Optimizers {
        actor: Adam::new(&policy.store, policy.actor.params(), c),
        critic: Adam::new(&policy.store, policy.critic.params(), c),
    }
}

/// A minibatch over every sequence of `batch` with advantages `adv`.
fn whole_batch(batch: &TrajectoryBatch, adv: &[f64]) -> Minibatch {
    let units: Vec<usize> = (0..batch.num_envs * batch.num_chunks()).collect();
    build_minibatch(batch, adv, &batch.values.clone(), &units)
}

fn current_log_probs(policy: &Policy, mb: &Minibatch) -> Vec<f64> {
    let mut g = Graph::new();
    let nodes = actor_loss(&mut g, &policy.store, &policy.actor, mb, 0.2, 0.0).unwrap();
    g.value(nodes.log_probs).data().to_vec()
}

#[test]
fn clipped_ratio_uses_one_plus_epsilon() {
    let spec = spec(40);
    let cfg = config();
    let policy = policy(&spec, &cfg, 1);
    let batch = rollout(&policy, &spec, &cfg, 20, ActionSelection::Sample, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let adv: Vec<f64> = (0..batch.actions.len()).map(|_| rng.random_range(0.1..2.0)).collect();
    let mut mb = whole_batch(&batch, &adv);
    mb.old_log_probs = current_log_probs(&policy, &mb).iter().map(|l| l - 1.5f64.ln()).collect();

    let mut g = Graph::new();
    let nodes = actor_loss(&mut g, &policy.store, &policy.actor, &mb, 0.2, 0.0).unwrap();
    for r in g.value(nodes.ratio).data() {
        assert!((r - 1.5).abs() < 1e-9);
    }
    let expected = 1.2 * mb.advantages.iter().sum::<f64>() / mb.advantages.len() as f64;
    assert!((g.value(nodes.surrogate).item() - expected).abs() < 1e-9);
    g.backward(nodes.loss).unwrap();
    let mut store = policy.store.clone();
    store.zero_grads();
    g.accumulate_param_grads(&mut store);
    for id in policy.actor.params() {
        assert!(store.grad(id).data().iter().all(|x| *x == 0.0), "{}", store.name(id));
    }
}

#[test]
fn unit_ratio_makes_clipping_inactive() {
    let spec = spec(40);
    let cfg = config();
    let policy = policy(&spec, &cfg, 3);
    let batch = rollout(&policy, &spec, &cfg, 20, ActionSelection::Sample, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let adv: Vec<f64> = (0..batch.actions.len()).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut mb = whole_batch(&batch, &adv);
    mb.old_log_probs = current_log_probs(&policy, &mb);
    let grads = |clip: f64| {
        let mut g = Graph::new();
        let nodes = actor_loss(&mut g, &policy.store, &policy.actor, &mb, clip, 0.0).unwrap();
        g.backward(nodes.loss).unwrap();
        let mut store = policy.store.clone();
        store.zero_grads();
        g.accumulate_param_grads(&mut store);
        (g.value(nodes.loss).item(), store)
    };
    let (l1, s1) = grads(0.2);
    let (l2, s2) = grads(1e6);
    assert_eq!(l1, l2);
    for id in policy.actor.params() {
        assert!(s1.grad(id).max_abs_diff(s2.grad(id)) < 1e-12);
    }
}

#[test]
fn one_step_decreases_actor_loss() {
    let spec = spec(40);
    let cfg = config();
    let mut policy = policy(&spec, &cfg, 5);
    let batch = rollout(&policy, &spec, &cfg, 20, ActionSelection::Sample, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let adv: Vec<f64> = (0..batch.actions.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mb = whole_batch(&batch, &adv);
    let loss = |p: &Policy| {
        let mut g = Graph::new();
        let nodes = actor_loss(&mut g, &p.store, &p.actor, &mb, 0.2, 0.01).unwrap();
        g.value(nodes.loss).item()
    };
    let before = loss(&policy);
    let mut opt = optimizers(&policy, 1e-4);
    policy.store.zero_grads();
    let mut g = Graph::new();
    let nodes = actor_loss(&mut g, &policy.store, &policy.actor, &mb, 0.2, 0.01).unwrap();
    g.backward(nodes.loss).unwrap();
    g.accumulate_param_grads(&mut policy.store);
    opt.actor.step(&mut policy.store);
    assert!(loss(&policy) < before);
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let spec = spec(40);
    let cfg = TrainConfig {
        lr: 0.0,
        critic_lr: 0.0,
        entropy_coef: 0.0,
        ..config()
    };
    let mut policy = policy(&spec, &cfg, 7);
    let before = policy.store.clone();
    let batch = rollout(&policy, &spec, &cfg, 20, ActionSelection::Sample, 7);
    let mut opt = optimizers(&policy, 0.0);
    let mut norm = ValueNorm::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    ppo_update(&mut policy, &mut opt, &mut norm, &batch, &cfg, 0, &mut rng).unwrap();
    for (id, p) in before.iter() {
        assert_eq!(p.value.data(), policy.store.value(id).data(), "{}", p.name);
    }
}

#[test]
fn non_finite_parameters_abort_the_update() {
    let spec = spec(40);
    let cfg = config();
    let mut policy = policy(&spec, &cfg, 9);
    let batch = rollout(&policy, &spec, &cfg, 20, ActionSelection::Sample, 9);
    let id = policy.actor.trunk.head.weight;
    policy.store.value_mut(id).data_mut()[0] = f64::NAN;
    let mut opt = optimizers(&policy, 1e-3);
    let err = ppo_update(&mut policy, &mut opt, &mut ValueNorm::default(), &batch, &cfg, 3, &mut ChaCha8Rng::seed_from_u64(1))
        .unwrap_err();
    assert!(err.to_string().contains("non-finite value at update 3"), "{err}");
}

#[test]
fn normalized_advantages_have_zero_mean_and_unit_std() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..50 {
        let n = rng.random_range(2..500);
        let scale = rng.random_range(0.01..100.0);
        let shift = rng.random_range(-50.0..50.0);
        let mut mb = Minibatch {
            steps: 1,
            units: n,
            n_agents: 1,
            obs: Tensor::zeros(n, 1),
            actions: vec![0; n],
            old_log_probs: vec![0.0; n],
            advantages: (0..n).map(|_| shift + scale * rng.random_range(-1.0..1.0)).collect(),
            old_values: vec![0.0; n],
            targets: vec![0.0; n],
            actor_h0: Tensor::zeros(n, 1),
            critic_h0: Tensor::zeros(n, 1),
        };
        mb.normalize_advantages();
        let mean = mb.advantages.iter().sum::<f64>() / n as f64;
        let std = (mb.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!(mean.abs() <= 1e-6);
        assert!((std - 1.0).abs() <= 1e-6);
    }
}

#[test]
fn full_horizon_rollout_stores_twenty_boundaries() {
    let spec = spec(200);
    let cfg = TrainConfig {
        num_envs: 1,
        rollout_length: 200,
        ..config()
    };
    let policy = policy(&spec, &cfg, 11);
    let batch = rollout(&policy, &spec, &cfg, 200, ActionSelection::Sample, 11);
    assert_eq!(batch.boundaries_per_env(), 20);
    assert!(batch.log_probs.iter().all(|l| l.is_finite()));
    assert!(batch.dones[199]);
}

#[test]
fn batch_rewards_match_episode_metrics() {
    let spec = spec(40);
    let cfg = config();
    let policy = policy(&spec, &cfg, 12);
    let mut envs = VecEnv::new(2, spec.n_agents(), policy.hidden_dim(), 12, 2, 0);
    let mut finished = Vec::new();
    let batch = collect_rollout(
        &policy,
        &spec,
        &mut envs,
        40,
        10,
        ActionSelection::Sample,
        &mut ChaCha8Rng::seed_from_u64(12),
        &mut finished,
    )
    .unwrap();
    assert_eq!(finished.len(), 2);
    for (env, ep) in finished.iter().enumerate() {
        let mut total = 0.0;
        let mut components = [0.0; 7];
        for t in 0..40 {
            for a in 0..batch.n_agents {
                let i = batch.index(t, env, a);
                total += batch.rewards[i];
                for (c, v) in components.iter_mut().zip(batch.reward_components[i]) {
                    *c += v;
                }
            }
        }
        assert!((total - ep.metrics.return_total).abs() < 1e-9);
        for (c, m) in components.iter().zip(ep.metrics.component_returns) {
            assert!((c - m).abs() < 1e-9);
        }
        assert!(batch.bootstrap.iter().all(|b| *b == 0.0));
    }
}

#[test]
fn rollouts_are_deterministic() {
    let spec = spec(40);
    let cfg = config();
    let policy = policy(&spec, &cfg, 13);
    for mode in [ActionSelection::Greedy, ActionSelection::Sample] {
        let a = rollout(&policy, &spec, &cfg, 20, mode, 99);
        let b = rollout(&policy, &spec, &cfg, 20, mode, 99);
        assert_eq!(a, b);
    }
}

#[test]
fn variants_share_the_update_path() {
    let spec = spec(40);
    for critic in [CriticVariant::Plain, CriticVariant::Attention] {
        let cfg = TrainConfig { critic, ..config() };
        let mut policy = policy(&spec, &cfg, 14);
        let batch = rollout(&policy, &spec, &cfg, 20, ActionSelection::Sample, 14);
        let mut opt = optimizers(&policy, 5e-4);
        let stats = ppo_update(&mut policy, &mut opt, &mut ValueNorm::default(), &batch, &cfg, 0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(stats.critic_loss.is_finite() && stats.entropy > 0.0);
    }
}
