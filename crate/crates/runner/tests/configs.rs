//! Every shipped configuration loads, and each ablation differs from its
//! table's baseline in exactly one aspect.

use std::path::{Path, PathBuf};

use tending_core::reward::UncollectedMode;
use tending_core::{EntityRepresentation, ObservationConfig, RewardConfig};
use tending_mappo::CriticVariant;
use tending_runner::config::{load_config, load_sweep, ExperimentConfig};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(rel: &str) -> ExperimentConfig {
    load_config(&configs().join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

fn obs_diff(a: &ObservationConfig, b: &ObservationConfig) -> usize {
    usize::from(a.include_velocities != b.include_velocities)
        + usize::from(a.include_time_since_ready != b.include_time_since_ready)
        + usize::from(a.normalize != b.normalize)
        + usize::from(a.entity_representation != b.entity_representation)
        + usize::from(a.include_blockers != b.include_blockers)
        + usize::from(a.include_walls != b.include_walls)
}

fn reward_diff(a: &RewardConfig, b: &RewardConfig) -> usize {
    usize::from(a.share_pick_place != b.share_pick_place)
        + usize::from(a.enable_time_penalty != b.enable_time_penalty)
        + usize::from(a.enable_uncollected_penalty != b.enable_uncollected_penalty)
        + usize::from(a.uncollected_mode != b.uncollected_mode)
        + usize::from(a.enable_distance_shaping != b.enable_distance_shaping)
}

#[test]
fn top_level_configs_load() {
    for rel in [
        "ab_mappo.toml",
        "mappo.toml",
        "increasing_penalty.toml",
        "paper_scale.toml",
        "three_machines.toml",
    ] {
        load(rel);
    }
    assert_eq!(load("ab_mappo.toml").train.critic, CriticVariant::Attention);
    assert_eq!(load("mappo.toml").train.critic, CriticVariant::Plain);
    let paper = load("paper_scale.toml");
    assert_eq!((paper.episodes, paper.seeds.len()), (18_200, 3));
    assert_eq!(load("three_machines.toml").layout().num_machines(), 3);
}

#[test]
fn increasing_penalty_differs_from_mappo_only_in_the_penalty_mode() {
    let base = load("mappo.toml");
    let inc = load("increasing_penalty.toml");
    assert_eq!(inc.reward.uncollected_mode, UncollectedMode::Increasing);
    assert_eq!(reward_diff(&base.reward, &inc.reward), 1);
    assert_eq!(base.observation, inc.observation);
    assert_eq!(base.train, inc.train);
    assert_eq!(base.episodes, inc.episodes);
}

#[test]
fn sweeps_list_one_run_per_table_row() {
    for (sweep, rows) in [("observation", 7), ("reward", 6), ("combination", 4)] {
        let (spec, runs) = load_sweep(&configs().join(format!("ablations/{sweep}.toml"))).unwrap();
        assert_eq!(runs.len(), rows, "{sweep}");
        let stems: Vec<String> = runs.iter().map(|(s, _)| s.clone()).collect();
        let expected: Vec<String> = (1..=rows).map(|i| format!("exp{i}")).collect();
        assert_eq!(stems, expected);
        assert!(runs.iter().all(|(_, c)| c.train.critic == CriticVariant::Plain));
        assert_eq!(spec.name, sweep);
    }
    let (_, runs) = load_sweep(&configs().join("acceptance.toml")).unwrap();
    assert_eq!(runs.len(), 3);
}

#[test]
fn observation_ablations_change_one_aspect() {
    let base = load("ablations/observation/exp1.toml");
    assert!(base.observation.include_velocities && base.observation.include_walls);
    for i in 2..=7 {
        let c = load(&format!("ablations/observation/exp{i}.toml"));
        assert_eq!(obs_diff(&base.observation, &c.observation), 1, "exp{i}");
        assert_eq!(c.reward, base.reward, "exp{i}");
    }
    let corners = load("ablations/observation/exp5.toml");
    assert_eq!(corners.observation.entity_representation, EntityRepresentation::TwoCorners);
}

#[test]
fn reward_ablations_change_one_aspect() {
    let base = load("ablations/reward/exp1.toml");
    assert!(base.reward.share_pick_place);
    assert_eq!(base.observation, load("ablations/observation/exp1.toml").observation);
    for i in 2..=6 {
        let c = load(&format!("ablations/reward/exp{i}.toml"));
        assert_eq!(reward_diff(&base.reward, &c.reward), 1, "exp{i}");
        assert_eq!(c.observation, base.observation, "exp{i}");
    }
}

#[test]
fn chosen_combination_is_the_default_setup() {
    let c = load("ablations/combination/exp2.toml");
    let d = ExperimentConfig::default();
    assert_eq!(c.observation, d.observation);
    assert_eq!(c.reward, d.reward);
}
