//! Random layouts, random states and a straight-line reward oracle.
#![allow(dead_code)]

use rand::{Rng, RngCore};
use tending_core::layout::{LayoutSpec, MachineSpec, RectSpec, StorageSpec};
use tending_core::reward::{CollisionMode, RewardConfig, UncollectedMode};
use tending_core::scenario::{MachineState, Scenario, ScenarioParams, ScenarioState, StepEvents};
use tending_core::world::{Body, KinematicState, World};
use tending_core::Vec2;

fn rect_in(rng: &mut (impl RngCore + ?Sized), lo: Vec2, hi: Vec2, hx: (f64, f64), hy: (f64, f64)) -> RectSpec {
    let half = Vec2::new(rng.random_range(hx.0..hx.1), rng.random_range(hy.0..hy.1));
    let margin = 0.02;
    let center = Vec2::new(
        rng.random_range(lo.x + half.x + margin..hi.x - half.x - margin),
        rng.random_range(lo.y + half.y + margin..hi.y - half.y - margin),
    );
    RectSpec::new(center, half)
}

/// Midpoint of a random face.
fn face_anchor(rng: &mut (impl RngCore + ?Sized), rect: &RectSpec) -> Vec2 {
    let (c, h) = (rect.center, rect.half_extents);
    match rng.random_range(0..4) {
        0 => Vec2::new(c.x - h.x, c.y),
        1 => Vec2::new(c.x + h.x, c.y),
        2 => Vec2::new(c.x, c.y - h.y),
        _ => Vec2::new(c.x, c.y + h.y),
    }
}

/// A random valid layout with 1-4 agents, 1-3 machines and 0-3 blockers.
pub fn random_layout(rng: &mut impl RngCore) -> LayoutSpec {
    loop {
        let width = rng.random_range(1.6..3.0);
        let height = rng.random_range(1.6..3.0);
        let (lo, hi) = (Vec2::new(-width / 2.0, -height / 2.0), Vec2::new(width / 2.0, height / 2.0));
        let agent_radius = rng.random_range(0.03..0.08);
        let mut statics: Vec<RectSpec> = Vec::new();
        let mut place = |rng: &mut dyn RngCore, hx, hy| -> Option<RectSpec> {
            for _ in 0..50 {
                let r = rect_in(rng, lo, hi, hx, hy);
                let padded = RectSpec::new(r.center, r.half_extents + Vec2::new(0.05, 0.05));
                if statics.iter().all(|s| !s.overlaps(&padded)) {
                    statics.push(r);
                    return Some(r);
                }
            }
            None
        };
        let m = rng.random_range(1..=3);
        let mut machines = Vec::new();
        for _ in 0..m {
            let Some(r) = place(rng, (0.08, 0.2), (0.06, 0.15)) else { break };
            machines.push(MachineSpec {
                center: r.center,
                half_extents: r.half_extents,
                anchor: face_anchor(rng, &r),
            });
        }
        let mut blockers = Vec::new();
        for _ in 0..rng.random_range(0..=3) {
            if let Some(r) = place(rng, (0.05, 0.25), (0.03, 0.1)) {
                blockers.push(r);
            }
        }
        let Some(s) = place(rng, (0.1, 0.25), (0.06, 0.12)) else { continue };
        let storage = StorageSpec {
            center: s.center,
            half_extents: s.half_extents,
            anchor: face_anchor(rng, &s),
        };
        let n = rng.random_range(1..=4);
        let mut spawns: Vec<Vec2> = Vec::new();
        for _ in 0..200 {
            if spawns.len() == n {
                break;
            }
            let p = Vec2::new(
                rng.random_range(lo.x + agent_radius..hi.x - agent_radius),
                rng.random_range(lo.y + agent_radius..hi.y - agent_radius),
            );
            let clear = statics.iter().all(|r| r.distance_to(p) > agent_radius + 0.01)
                && spawns.iter().all(|q| q.distance(p) > 2.0 * agent_radius + 0.01);
            if clear {
                spawns.push(p);
            }
        }
        let layout = LayoutSpec {
            width,
            height,
            wall_thickness: 0.2,
            agent_radius,
            spawns,
            machines,
            blockers,
            storage,
        };
        if layout.spawns.len() == n && !layout.machines.is_empty() && layout.validate().is_ok() {
            return layout;
        }
    }
}

pub fn random_reward_config(rng: &mut impl RngCore) -> RewardConfig {
    RewardConfig {
        pick_reward: rng.random_range(0.0..3.0),
        place_reward: rng.random_range(0.0..3.0),
        collision_penalty: -rng.random_range(0.0..2.0),
        progress_scale: rng.random_range(0.0..2.0),
        uncollected_scale: -rng.random_range(0.0..0.05),
        time_penalty: -rng.random_range(0.0..0.05),
        share_pick_place: rng.random_bool(0.5),
        uncollected_mode: if rng.random_bool(0.5) {
            UncollectedMode::Fixed
        } else {
            UncollectedMode::Increasing
        },
        collision_mode: if rng.random_bool(0.5) {
            CollisionMode::Onset
        } else {
            CollisionMode::EveryStep
        },
        enable_time_penalty: rng.random_bool(0.7),
        enable_distance_shaping: rng.random_bool(0.7),
        enable_uncollected_penalty: rng.random_bool(0.7),
    }
}

/// A random mid-episode state. Agents are biased towards machine anchors
/// and storage so picks and places occur often.
pub fn random_state(rng: &mut impl RngCore, scenario: &Scenario) -> ScenarioState {
    let layout = scenario.layout();
    let mut state = scenario.reset(rng.next_u64());
    let (lo, hi) = layout.interior();
    let r = layout.agent_radius;
    let reach = scenario.pick_radius();
    let mut bodies: Vec<Body> = state.world.bodies().to_vec();
    for agent in 0..layout.num_agents() {
        let near = |rng: &mut dyn RngCore, target: Vec2| {
            target + Vec2::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)) * reach
        };
        let p = match rng.random_range(0..10) {
            0..=2 => {
                let m = rng.random_range(0..layout.num_machines());
                near(rng, layout.machines[m].anchor)
            }
            3..=4 => near(rng, layout.storage.anchor),
            _ => Vec2::new(rng.random_range(lo.x + r..hi.x - r), rng.random_range(lo.y + r..hi.y - r)),
        };
        let p = Vec2::new(p.x.clamp(lo.x + r, hi.x - r), p.y.clamp(lo.y + r, hi.y - r));
        let max = layout_speed(scenario);
        let v = Vec2::new(rng.random_range(-max..=max), rng.random_range(-max..=max));
        bodies[agent].state = KinematicState { position: p, velocity: v };
        state.agents[agent].has_part = rng.random_bool(0.4);
    }
    state.world = World::new(bodies, *state.world.params());
    let delay = scenario.params().production_delay;
    for m in state.machines.iter_mut() {
        *m = if rng.random_bool(0.6) {
            MachineState {
                ready: true,
                production_timer: 0,
                uncollected_steps: rng.random_range(0..200),
                ..*m
            }
        } else {
            MachineState {
                ready: false,
                production_timer: rng.random_range(1..=delay),
                uncollected_steps: 0,
                ..*m
            }
        };
    }
    state.t = rng.random_range(0..scenario.episode_length());
    state
}

fn layout_speed(scenario: &Scenario) -> f64 {
    scenario.params().physics.max_speed / 2f64.sqrt()
}

pub fn random_actions(rng: &mut impl RngCore, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..5)).collect()
}

/// Actions that mostly steer each agent to its next task target.
pub fn seeking_actions(rng: &mut impl RngCore, scenario: &Scenario, state: &ScenarioState, noise: f64) -> Vec<usize> {
    let layout = scenario.layout();
    (0..state.num_agents())
        .map(|a| {
            if rng.random_bool(noise) {
                return rng.random_range(0..5);
            }
            let p = state.agent_position(a);
            let target = if state.agents[a].has_part {
                layout.storage.anchor
            } else {
                let m = (0..layout.num_machines())
                    .min_by(|&i, &j| {
                        p.distance(layout.machines[i].anchor)
                            .total_cmp(&p.distance(layout.machines[j].anchor))
                    })
                    .unwrap();
                layout.machines[m].anchor
            };
            let d = target - p;
            if d.x.abs() > d.y.abs() {
                if d.x < 0.0 { 1 } else { 2 }
            } else if d.y < 0.0 {
                3
            } else {
                4
            }
        })
        .collect()
}

pub fn default_scenario() -> Scenario {
    Scenario::new(LayoutSpec::default(), ScenarioParams::default()).unwrap()
}

/// Reward components in the fixed order pick, place, collision, machine
/// progress, storage progress, uncollected, time; then the total.
pub fn oracle_rewards(
    layout: &LayoutSpec,
    prev: &ScenarioState,
    curr: &ScenarioState,
    events: &StepEvents,
    cfg: &RewardConfig,
) -> Vec<[f64; 8]> {
    let n = layout.spawns.len();
    let dist = |a: Vec2, b: Vec2| (a.x - b.x).hypot(a.y - b.y);

    let mut r_u = 0.0;
    if cfg.enable_uncollected_penalty {
        let mut acc = 0.0;
        for m in &curr.machines {
            if m.ready {
                acc += match cfg.uncollected_mode {
                    UncollectedMode::Fixed => 1.0,
                    UncollectedMode::Increasing => m.uncollected_steps as f64,
                };
            }
        }
        r_u = acc * cfg.uncollected_scale;
    }

    let mut out = Vec::new();
    for i in 0..n {
        let mut picks = 0usize;
        let mut places = 0usize;
        for p in &events.picks {
            if cfg.share_pick_place || p.agent == i {
                picks += 1;
            }
        }
        for &a in &events.places {
            if cfg.share_pick_place || a == i {
                places += 1;
            }
        }
        let r_pi = picks as f64 * cfg.pick_reward;
        let r_pl = places as f64 * cfg.place_reward;

        let mut hits = 0usize;
        for c in &events.contacts {
            let counted = match cfg.collision_mode {
                CollisionMode::Onset => c.onset,
                CollisionMode::EveryStep => true,
            };
            if counted && (c.body_a == i || c.body_b == i) {
                hits += 1;
            }
        }
        let r_c = hits as f64 * cfg.collision_penalty;

        let before = prev.world.bodies()[i].state.position;
        let after = curr.world.bodies()[i].state.position;
        let mut r_pm = 0.0;
        let mut r_ps = 0.0;
        if cfg.enable_distance_shaping {
            if prev.agents[i].has_part {
                let s = layout.storage.anchor;
                r_ps = cfg.progress_scale * (dist(before, s) - dist(after, s));
            } else {
                let mut best: Option<(f64, Vec2)> = None;
                for (spec, m) in layout.machines.iter().zip(&curr.machines) {
                    if !m.ready {
                        continue;
                    }
                    let d = dist(after, spec.anchor);
                    if best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, spec.anchor));
                    }
                }
                if let Some((_, anchor)) = best {
                    r_pm = cfg.progress_scale * (dist(before, anchor) - dist(after, anchor));
                }
            }
        }

        let r_t = if cfg.enable_time_penalty && r_pi == 0.0 && r_pl == 0.0 && r_u == 0.0 {
            cfg.time_penalty
        } else {
            0.0
        };
        let total = r_pi + r_pl + r_c + r_pm + r_ps + r_u + r_t;
        out.push([r_pi, r_pl, r_c, r_pm, r_ps, r_u, r_t, total]);
    }
    out
}
