mod support;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tending_core::metrics::{CollisionCounting, EpisodeAccumulator};
use tending_core::scenario::{Scenario, ScenarioParams, StepEvents};

fn run_episode(scenario: &Scenario, seed: u64, noise: f64) -> (Vec<StepEvents>, tending_core::ScenarioState) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = scenario.reset(seed);
    let mut events = Vec::new();
    while !scenario.is_finished(&state) {
        let actions = support::seeking_actions(&mut rng, scenario, &state, noise);
        let (next, ev) = scenario.step(&state, &actions).unwrap();
        events.push(ev);
        state = next;
    }
    (events, state)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn episode_invariants(seed in any::<u64>(), noise in 0.2f64..1.0, jitter in 0.0f64..0.1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = if seed % 2 == 0 { support::random_layout(&mut rng) } else { Default::default() };
        let params = ScenarioParams { spawn_jitter: jitter, ..ScenarioParams::default() };
        let scenario = Scenario::new(layout.clone(), params).unwrap();
        let (events, last) = run_episode(&scenario, seed, noise);

        let picks: usize = events.iter().map(|e| e.picks.len()).sum();
        let places: usize = events.iter().map(|e| e.places.len()).sum();
        let machine_total: u32 = last.machines.iter().map(|m| m.parts_collected).sum();
        let agent_total: u32 = last.agents.iter().map(|a| a.parts_collected).sum();
        prop_assert_eq!(machine_total as usize, picks);
        prop_assert_eq!(agent_total as usize, picks);
        prop_assert!(places <= picks);
        let carrying = last.agents.iter().filter(|a| a.has_part).count();
        prop_assert_eq!(places + carrying, picks);
        for a in &last.agents {
            prop_assert!(a.parts_delivered <= a.parts_collected);
        }
        let cap = 1 + (params.episode_length as u32 - 1) / params.production_delay;
        for m in &last.machines {
            prop_assert!(m.parts_collected <= cap);
            prop_assert!(m.parts_collected <= params.parts_per_machine_max());
        }

        let (lo, hi) = layout.interior();
        let r = layout.agent_radius;
        let mut state = scenario.reset(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        while !scenario.is_finished(&state) {
            let actions = support::random_actions(&mut rng, scenario.num_agents());
            let (next, ev) = scenario.step(&state, &actions).unwrap();
            for c in &ev.contacts {
                prop_assert!(c.body_a < c.body_b);
                prop_assert!(c.body_a < scenario.num_agents());
            }
            for a in 0..scenario.num_agents() {
                let p = next.agent_position(a);
                prop_assert!(p.x >= lo.x + r - 1e-6 && p.x <= hi.x - r + 1e-6, "agent {} at {:?}", a, p);
                prop_assert!(p.y >= lo.y + r - 1e-6 && p.y <= hi.y - r + 1e-6, "agent {} at {:?}", a, p);
                for (name, rect) in layout.interior_statics() {
                    prop_assert!(rect.distance_to(p) >= r - 1e-6, "agent {} inside {}", a, name);
                }
                prop_assert!(next.agent_velocity(a).length() <= params.physics.max_speed + 1e-12);
            }
            state = next;
        }
    }

    #[test]
    fn replay_is_deterministic(seed in any::<u64>()) {
        let scenario = support::default_scenario();
        let (a, sa) = run_episode(&scenario, seed, 0.5);
        let (b, sb) = run_episode(&scenario, seed, 0.5);
        prop_assert_eq!(a, b);
        prop_assert_eq!(sa, sb);
    }

    #[test]
    fn collision_counts_relate(seed in any::<u64>()) {
        let scenario = support::default_scenario();
        let (events, last) = run_episode(&scenario, seed, 0.8);
        let mut per_agent = EpisodeAccumulator::new(3, 2, CollisionCounting::PerAgent);
        let mut per_event = EpisodeAccumulator::new(3, 2, CollisionCounting::PerEvent);
        for e in &events {
            per_agent.record(e, None);
            per_event.record(e, None);
        }
        let a = per_agent.finish(10).unwrap();
        let e = per_event.finish(10).unwrap();
        let onsets: usize = events.iter().map(|e| e.onsets().count()).sum();
        prop_assert_eq!(e.collisions as usize, onsets);
        prop_assert!(a.collisions >= e.collisions && a.collisions <= 2 * e.collisions);
        let tallied: u32 = last.agents.iter().map(|x| x.collisions).sum();
        prop_assert_eq!(a.collisions, tallied);
    }
}

#[test]
fn seeking_policy_collects_on_default_layout() {
    let scenario = support::default_scenario();
    let (events, _) = run_episode(&scenario, 1, 0.2);
    let picks: usize = events.iter().map(|e| e.picks.len()).sum();
    let places: usize = events.iter().map(|e| e.places.len()).sum();
    assert!(picks >= 3 && places >= 1, "picks {picks}, places {places}");
}
