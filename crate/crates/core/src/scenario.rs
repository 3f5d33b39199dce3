//! Machine-tending game rules on top of the kinematic world.
//!
//! One step runs, in order: physics integration with the action forces,
//! contact detection and resolution, pick resolution, place resolution,
//! production-timer update, and finally the step counter increment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec2;
use crate::layout::{LayoutError, LayoutSpec, RectSpec};
use crate::world::{
    action_to_force, Body, BodyKind, BodySpec, ContactEvent, KinematicState, PhysicsParams, World,
    WorldError,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error("invalid scenario parameters: {}", .0.join("; "))]
    Params(Vec<String>),
    #[error("episode already finished at t = {t}")]
    EpisodeFinished { t: usize },
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error(transparent)]
    World(#[from] WorldError),
}

/// Rule constants that are not geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioParams {
    /// Steps per episode.
    pub episode_length: usize,
    /// Steps between a pick and the machine's next ready part.
    pub production_delay: u32,
    /// Extra reach beyond the agent radius for picking and placing.
    pub pick_margin: f64,
    /// Half-width of the uniform spawn jitter box; zero disables jitter.
    pub spawn_jitter: f64,
    pub physics: PhysicsParams,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            episode_length: 200,
            production_delay: 20,
            pick_margin: 0.05,
            spawn_jitter: 0.0,
            physics: PhysicsParams::default(),
        }
    }
}

impl ScenarioParams {
    pub fn validate(&self) -> Vec<String> {
        let mut problems = self.physics.validate();
        if self.episode_length == 0 {
            problems.push("episode_length must be at least 1".to_string());
        }
        if self.production_delay == 0 {
            problems.push("production_delay must be at least 1".to_string());
        }
        if !(self.pick_margin.is_finite() && self.pick_margin >= 0.0) {
            problems.push(format!("pick_margin must be >= 0, got {}", self.pick_margin));
        }
        if !(self.spawn_jitter.is_finite() && self.spawn_jitter >= 0.0) {
            problems.push(format!("spawn_jitter must be >= 0, got {}", self.spawn_jitter));
        }
        problems
    }

    /// Most parts a single machine can hand out in one episode under the
    /// production delay, as used for machine utilization.
    pub fn parts_per_machine_max(&self) -> u32 {
        self.episode_length as u32 / self.production_delay
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MachineState {
    pub ready: bool,
    /// Steps remaining until ready; zero exactly when `ready`.
    pub production_timer: u32,
    /// Steps the current ready part has been waiting.
    pub uncollected_steps: u32,
    /// Parts that became available, including the one present at reset.
    pub parts_produced: u32,
    /// Parts picked from this machine.
    pub parts_collected: u32,
}

impl MachineState {
    fn fresh() -> Self {
        Self {
            ready: true,
            production_timer: 0,
            uncollected_steps: 0,
            parts_produced: 1,
            parts_collected: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AgentTaskState {
    pub has_part: bool,
    pub parts_collected: u32,
    pub parts_delivered: u32,
    /// Contact onsets this agent took part in.
    pub collisions: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioState {
    pub t: usize,
    pub world: World,
    pub machines: Vec<MachineState>,
    pub agents: Vec<AgentTaskState>,
}

impl ScenarioState {
    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn agent_kinematics(&self, agent: usize) -> KinematicState {
        self.world.body(agent).state
    }

    pub fn agent_position(&self, agent: usize) -> Vec2 {
        self.world.body(agent).state.position
    }

    pub fn agent_velocity(&self, agent: usize) -> Vec2 {
        self.world.body(agent).state.velocity
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pick {
    pub agent: usize,
    pub machine: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepEvents {
    pub picks: Vec<Pick>,
    /// Agents that delivered a part this step.
    pub places: Vec<usize>,
    /// Every touching pair this step; `onset` marks new collisions.
    pub contacts: Vec<ContactEvent>,
}

impl StepEvents {
    pub fn onsets(&self) -> impl Iterator<Item = &ContactEvent> {
        self.contacts.iter().filter(|c| c.onset)
    }
}

/// Winner among agents in pick range of one ready machine: closest to the
/// anchor, ties going to the lowest agent index.
pub fn resolve_pick_contention(candidates: &[(usize, f64)]) -> Option<usize> {
    candidates
        .iter()
        .copied()
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(agent, _)| agent)
}

/// Advances production timers after pick resolution.
///
/// Machines picked this step keep their fresh timer. Other idle machines
/// count down and become ready at zero; ready machines age their part.
pub fn update_production(machines: &mut [MachineState], picked: &[bool]) {
    for (machine, &was_picked) in machines.iter_mut().zip(picked) {
        if was_picked {
            continue;
        }
        if machine.ready {
            machine.uncollected_steps += 1;
        } else {
            machine.production_timer = machine.production_timer.saturating_sub(1);
            if machine.production_timer == 0 {
                machine.ready = true;
                machine.uncollected_steps = 0;
                machine.parts_produced += 1;
            }
        }
    }
}

/// A validated layout plus rule constants; stateless between episodes.
#[derive(Debug, Clone)]
pub struct Scenario {
    layout: LayoutSpec,
    params: ScenarioParams,
    statics: Vec<Body>,
    labels: Vec<(BodyKind, usize)>,
}

impl Scenario {
    pub fn new(layout: LayoutSpec, params: ScenarioParams) -> Result<Self, ScenarioError> {
        layout.validate()?;
        let problems = params.validate();
        if !problems.is_empty() {
            return Err(ScenarioError::Params(problems));
        }
        let mut statics = Vec::new();
        let mut labels: Vec<(BodyKind, usize)> =
            (0..layout.num_agents()).map(|i| (BodyKind::Agent, i)).collect();
        let mut push = |kind: BodyKind, index: usize, rect: RectSpec| {
            statics.push(Body {
                spec: BodySpec::fixed(kind, rect.half_extents),
                state: KinematicState::at_rest(rect.center),
            });
            labels.push((kind, index));
        };
        for (i, m) in layout.machines.iter().enumerate() {
            push(BodyKind::Machine, i, m.rect());
        }
        for (i, b) in layout.blockers.iter().enumerate() {
            push(BodyKind::Blocker, i, *b);
        }
        push(BodyKind::Storage, 0, layout.storage.rect());
        for (i, w) in layout.walls().iter().enumerate() {
            push(BodyKind::Wall, i, *w);
        }
        Ok(Self {
            layout,
            params,
            statics,
            labels,
        })
    }

    pub fn layout(&self) -> &LayoutSpec {
        &self.layout
    }

    pub fn params(&self) -> &ScenarioParams {
        &self.params
    }

    pub fn num_agents(&self) -> usize {
        self.layout.num_agents()
    }

    pub fn num_machines(&self) -> usize {
        self.layout.num_machines()
    }

    pub fn episode_length(&self) -> usize {
        self.params.episode_length
    }

    /// Kind and per-kind index of a world body.
    pub fn body_label(&self, body: usize) -> (BodyKind, usize) {
        self.labels[body]
    }

    pub fn pick_radius(&self) -> f64 {
        self.layout.agent_radius + self.params.pick_margin
    }

    pub fn machine_anchor_distance(&self, position: Vec2, machine: usize) -> f64 {
        position.distance(self.layout.machines[machine].anchor)
    }

    pub fn storage_anchor_distance(&self, position: Vec2) -> f64 {
        position.distance(self.layout.storage.anchor)
    }

    /// True when an agent at `position` is close enough to the storage
    /// rectangle to hand over a part.
    pub fn in_place_range(&self, position: Vec2) -> bool {
        self.layout.storage.rect().distance_to(position) <= self.pick_radius()
    }

    fn spawn_is_free(&self, p: Vec2, placed: &[Vec2]) -> bool {
        let r = self.layout.agent_radius;
        let (lo, hi) = self.layout.interior();
        if p.x - r < lo.x || p.x + r > hi.x || p.y - r < lo.y || p.y + r > hi.y {
            return false;
        }
        let clear_of_statics = self
            .layout
            .interior_statics()
            .iter()
            .all(|(_, rect)| rect.distance_to(p) > r);
        clear_of_statics && placed.iter().all(|q| q.distance(p) > 2.0 * r)
    }

    fn spawn_positions(&self, seed: u64) -> Vec<Vec2> {
        let jitter = self.params.spawn_jitter;
        if jitter == 0.0 {
            return self.layout.spawns.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut placed: Vec<Vec2> = Vec::with_capacity(self.layout.spawns.len());
        for (i, base) in self.layout.spawns.iter().enumerate() {
            let mut chosen = *base;
            for _ in 0..64 {
                let candidate = *base
                    + Vec2::new(
                        rng.random_range(-jitter..=jitter),
                        rng.random_range(-jitter..=jitter),
                    );
                let others_base = &self.layout.spawns[i + 1..];
                if self.spawn_is_free(candidate, &placed)
                    && others_base.iter().all(|q| q.distance(candidate) > 2.0 * self.layout.agent_radius)
                {
                    chosen = candidate;
                    break;
                }
            }
            placed.push(chosen);
        }
        placed
    }

    /// Fresh episode: agents at rest on their spawns, every machine ready.
    pub fn reset(&self, seed: u64) -> ScenarioState {
        let mass = self.params.physics.agent_mass;
        let mut bodies: Vec<Body> = self
            .spawn_positions(seed)
            .into_iter()
            .map(|p| Body {
                spec: BodySpec::agent(self.layout.agent_radius, mass),
                state: KinematicState::at_rest(p),
            })
            .collect();
        bodies.extend(self.statics.iter().copied());
        ScenarioState {
            t: 0,
            world: World::new(bodies, self.params.physics),
            machines: vec![MachineState::fresh(); self.num_machines()],
            agents: vec![AgentTaskState::default(); self.num_agents()],
        }
    }

    pub fn is_finished(&self, state: &ScenarioState) -> bool {
        state.t >= self.params.episode_length
    }

    pub fn step(
        &self,
        state: &ScenarioState,
        actions: &[usize],
    ) -> Result<(ScenarioState, StepEvents), ScenarioError> {
        if self.is_finished(state) {
            return Err(ScenarioError::EpisodeFinished { t: state.t });
        }
        let n = self.num_agents();
        if actions.len() != n {
            return Err(ScenarioError::ActionCount {
                expected: n,
                got: actions.len(),
            });
        }
        let forces = actions
            .iter()
            .map(|&a| action_to_force(a, self.params.physics.force_gain))
            .collect::<Result<Vec<_>, _>>()?;

        let mut next = state.clone();
        let contacts = next.world.step(&forces)?;
        for contact in contacts.iter().filter(|c| c.onset) {
            for body in [contact.body_a, contact.body_b] {
                if body < n {
                    next.agents[body].collisions += 1;
                }
            }
        }

        let carried_before: Vec<bool> = state.agents.iter().map(|a| a.has_part).collect();
        let radius = self.pick_radius();
        let mut picks = Vec::new();
        let mut picked_machines = vec![false; self.num_machines()];
        for machine in 0..self.num_machines() {
            if !next.machines[machine].ready {
                continue;
            }
            let candidates: Vec<(usize, f64)> = (0..n)
                .filter(|&a| !next.agents[a].has_part)
                .map(|a| (a, self.machine_anchor_distance(next.agent_position(a), machine)))
                .filter(|&(_, d)| d <= radius)
                .collect();
            if let Some(agent) = resolve_pick_contention(&candidates) {
                let m = &mut next.machines[machine];
                m.ready = false;
                m.production_timer = self.params.production_delay;
                m.uncollected_steps = 0;
                m.parts_collected += 1;
                let a = &mut next.agents[agent];
                a.has_part = true;
                a.parts_collected += 1;
                picked_machines[machine] = true;
                picks.push(Pick { agent, machine });
            }
        }

        let mut places = Vec::new();
        for agent in 0..n {
            if carried_before[agent] && self.in_place_range(next.agent_position(agent)) {
                let a = &mut next.agents[agent];
                a.has_part = false;
                a.parts_delivered += 1;
                places.push(agent);
            }
        }

        update_production(&mut next.machines, &picked_machines);
        next.t += 1;
        Ok((
            next,
            StepEvents {
                picks,
                places,
                contacts,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario() -> Scenario {
        Scenario::new(LayoutSpec::default(), ScenarioParams::default()).unwrap()
    }

    fn place_agent(state: &mut ScenarioState, agent: usize, p: Vec2) {
        let mut bodies = state.world.bodies().to_vec();
        bodies[agent].state = KinematicState::at_rest(p);
        state.world = World::new(bodies, *state.world.params());
    }

    #[test]
    fn reset_default_layout() {
        let sc = scenario();
        let s = sc.reset(0);
        assert_eq!(s.t, 0);
        assert_eq!(s.num_agents(), 3);
        assert_eq!(s.machines.len(), 2);
        assert!(s.machines.iter().all(|m| m.ready && m.production_timer == 0 && m.uncollected_steps == 0));
        assert!(s.agents.iter().all(|a| !a.has_part));
        for i in 0..3 {
            assert_eq!(s.agent_velocity(i), Vec2::ZERO);
            assert_eq!(s.agent_position(i), sc.layout().spawns[i]);
        }
        assert_eq!(sc.reset(0), sc.reset(12345));
    }

    #[test]
    fn jittered_reset_is_seeded_and_free() {
        let params = ScenarioParams {
            spawn_jitter: 0.1,
            ..ScenarioParams::default()
        };
        let sc = Scenario::new(LayoutSpec::default(), params).unwrap();
        assert_eq!(sc.reset(7), sc.reset(7));
        assert_ne!(sc.reset(7), sc.reset(8));
        let s = sc.reset(3);
        for i in 0..3 {
            let offset = s.agent_position(i) - sc.layout().spawns[i];
            assert!(offset.x.abs() <= 0.1 && offset.y.abs() <= 0.1);
        }
    }

    #[test]
    fn overlapping_layout_rejected() {
        let mut layout = LayoutSpec::default();
        layout.storage.center = layout.machines[1].center;
        assert!(matches!(
            Scenario::new(layout, ScenarioParams::default()),
            Err(ScenarioError::Layout(_))
        ));
    }

    #[test]
    fn contention_rules() {
        assert_eq!(resolve_pick_contention(&[]), None);
        assert_eq!(resolve_pick_contention(&[(2, 0.3)]), Some(2));
        assert_eq!(resolve_pick_contention(&[(0, 0.05), (1, 0.09)]), Some(0));
        assert_eq!(resolve_pick_contention(&[(2, 0.07), (0, 0.07)]), Some(0));
    }

    #[test]
    fn production_update_rules() {
        let mut m = vec![
            MachineState {
                ready: false,
                production_timer: 1,
                ..MachineState::default()
            },
            MachineState {
                ready: true,
                uncollected_steps: 4,
                ..MachineState::default()
            },
            MachineState {
                ready: false,
                production_timer: 20,
                ..MachineState::default()
            },
        ];
        update_production(&mut m, &[false, false, true]);
        assert!(m[0].ready && m[0].production_timer == 0 && m[0].uncollected_steps == 0);
        assert_eq!(m[1].uncollected_steps, 5);
        assert!(!m[2].ready && m[2].production_timer == 20 && m[2].uncollected_steps == 0);
    }

    #[test]
    fn pick_sets_production_delay() {
        let sc = scenario();
        let mut s = sc.reset(0);
        let anchor = sc.layout().machines[1].anchor;
        place_agent(&mut s, 0, anchor - Vec2::new(0.06, 0.0));
        let (next, events) = sc.step(&s, &[0, 0, 0]).unwrap();
        assert_eq!(events.picks, vec![Pick { agent: 0, machine: 1 }]);
        assert!(next.agents[0].has_part);
        assert!(!next.machines[1].ready);
        assert_eq!(next.machines[1].production_timer, 20);
        assert_eq!(next.machines[1].uncollected_steps, 0);
        assert_eq!(next.machines[0].uncollected_steps, 1);
    }

    #[test]
    fn carrying_agent_cannot_pick() {
        let sc = scenario();
        let mut s = sc.reset(0);
        let anchor = sc.layout().machines[0].anchor;
        place_agent(&mut s, 2, anchor + Vec2::new(0.06, 0.0));
        s.agents[2].has_part = true;
        s.agents[2].parts_collected = 1;
        let (next, events) = sc.step(&s, &[0, 0, 0]).unwrap();
        assert!(events.picks.is_empty());
        assert!(next.machines[0].ready);
    }

    #[test]
    fn place_at_storage() {
        let sc = scenario();
        let mut s = sc.reset(0);
        let anchor = sc.layout().storage.anchor;
        place_agent(&mut s, 1, anchor + Vec2::new(0.0, 0.08));
        s.agents[1].has_part = true;
        s.agents[1].parts_collected = 1;
        let (next, events) = sc.step(&s, &[0, 0, 0]).unwrap();
        assert_eq!(events.places, vec![1]);
        assert!(!next.agents[1].has_part);
        assert_eq!(next.agents[1].parts_delivered, 1);
    }

    #[test]
    fn closest_agent_wins_contested_part() {
        // Binary-exact coordinates so both distances are bit-identical.
        let mut layout = LayoutSpec::default();
        layout.machines[0].anchor = Vec2::new(-0.25, -0.25);
        let sc = Scenario::new(layout, ScenarioParams::default()).unwrap();
        let mut s = sc.reset(0);
        place_agent(&mut s, 2, Vec2::new(-0.1875, -0.1875));
        place_agent(&mut s, 0, Vec2::new(-0.1875, -0.3125));
        let (_, events) = sc.step(&s, &[0, 0, 0]).unwrap();
        // Symmetric positions: equal distance, lowest index wins.
        assert_eq!(events.picks, vec![Pick { agent: 0, machine: 0 }]);
    }

    #[test]
    fn episode_ends_at_horizon() {
        let sc = scenario();
        let mut s = sc.reset(0);
        for _ in 0..200 {
            s = sc.step(&s, &[0, 0, 0]).unwrap().0;
        }
        assert_eq!(s.t, 200);
        assert_eq!(sc.step(&s, &[0, 0, 0]), Err(ScenarioError::EpisodeFinished { t: 200 }));
    }

    #[test]
    fn action_count_checked() {
        let sc = scenario();
        let s = sc.reset(0);
        assert_eq!(
            sc.step(&s, &[0, 0]).unwrap_err(),
            ScenarioError::ActionCount { expected: 3, got: 2 }
        );
        assert!(matches!(
            sc.step(&s, &[0, 9, 0]).unwrap_err(),
            ScenarioError::World(WorldError::InvalidAction(9))
        ));
    }

    #[test]
    fn max_parts_per_machine_is_ten() {
        assert_eq!(ScenarioParams::default().parts_per_machine_max(), 10);
    }
}
