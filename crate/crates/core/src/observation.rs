//! Per-agent observation vectors.
//!
//! Field order is fixed so that trained checkpoints stay portable:
//!
//! 1. own absolute position, own has-part flag, own velocity (if enabled)
//! 2. per machine, in layout order: relative position, ready flag,
//!    time since ready (if enabled)
//! 3. storage relative position
//! 4. per other agent, ascending index: relative position, has-part flag,
//!    velocity (if enabled)
//! 5. blocker relative positions (if enabled)
//! 6. wall relative positions (if enabled)
//!
//! A "position" is two values for center points or four values (lower-left
//! then upper-right corner) in the two-corner representation. With
//! normalization on, absolute positions map the outer world box (walls
//! included) onto `[0, 1]`, relative offsets map `[-span, span]` onto
//! `[0, 1]`, velocities map `[-max_speed, max_speed]` onto `[0, 1]`, and the
//! time since ready is divided by the episode length.

use serde::{Deserialize, Serialize};

use crate::geometry::Vec2;
use crate::layout::{LayoutSpec, RectSpec};
use crate::scenario::{Scenario, ScenarioState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityRepresentation {
    #[default]
    Center,
    TwoCorners,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObservationConfig {
    pub include_velocities: bool,
    pub include_time_since_ready: bool,
    pub normalize: bool,
    pub entity_representation: EntityRepresentation,
    pub include_blockers: bool,
    pub include_walls: bool,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        Self {
            include_velocities: false,
            include_time_since_ready: false,
            normalize: true,
            entity_representation: EntityRepresentation::Center,
            include_blockers: false,
            include_walls: true,
        }
    }
}

impl ObservationConfig {
    fn position_width(&self) -> usize {
        match self.entity_representation {
            EntityRepresentation::Center => 2,
            EntityRepresentation::TwoCorners => 4,
        }
    }

    /// Observation length for `agents` agents, `machines` machines and
    /// `blockers` blockers (the last only matters when blockers are observed).
    pub fn dim(&self, agents: usize, machines: usize, blockers: usize) -> usize {
        let p = self.position_width();
        let vel = if self.include_velocities { 2 } else { 0 };
        let own = p + 1 + vel;
        let machine = p + 1 + usize::from(self.include_time_since_ready);
        let other = p + 1 + vel;
        let blocker_block = if self.include_blockers { blockers * p } else { 0 };
        let wall_block = if self.include_walls { 4 * p } else { 0 };
        own + machines * machine + p + agents.saturating_sub(1) * other + blocker_block + wall_block
    }

    pub fn dim_for(&self, layout: &LayoutSpec) -> usize {
        self.dim(layout.num_agents(), layout.num_machines(), layout.blockers.len())
    }

    /// Human-readable name of every entry, in order.
    pub fn schema(&self, layout: &LayoutSpec) -> Vec<String> {
        let mut names = Vec::new();
        let position = |names: &mut Vec<String>, prefix: &str| match self.entity_representation {
            EntityRepresentation::Center => {
                names.push(format!("{prefix}.x"));
                names.push(format!("{prefix}.y"));
            }
            EntityRepresentation::TwoCorners => {
                for c in ["min.x", "min.y", "max.x", "max.y"] {
                    names.push(format!("{prefix}.{c}"));
                }
            }
        };
        position(&mut names, "self.pos");
        names.push("self.has_part".to_string());
        if self.include_velocities {
            names.push("self.vel.x".to_string());
            names.push("self.vel.y".to_string());
        }
        for m in 0..layout.num_machines() {
            position(&mut names, &format!("machine{m}.rel"));
            names.push(format!("machine{m}.ready"));
            if self.include_time_since_ready {
                names.push(format!("machine{m}.time_since_ready"));
            }
        }
        position(&mut names, "storage.rel");
        for k in 1..layout.num_agents() {
            position(&mut names, &format!("other{k}.rel"));
            names.push(format!("other{k}.has_part"));
            if self.include_velocities {
                names.push(format!("other{k}.vel.x"));
                names.push(format!("other{k}.vel.y"));
            }
        }
        if self.include_blockers {
            for b in 0..layout.blockers.len() {
                position(&mut names, &format!("blocker{b}.rel"));
            }
        }
        if self.include_walls {
            for w in ["left", "right", "bottom", "top"] {
                position(&mut names, &format!("wall_{w}.rel"));
            }
        }
        names
    }
}

/// Maps world quantities onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalizer {
    pub min: Vec2,
    pub max: Vec2,
    pub max_speed: f64,
}

impl Normalizer {
    pub fn for_scenario(scenario: &Scenario) -> Self {
        let (min, max) = scenario.layout().outer_bounds();
        Self {
            min,
            max,
            max_speed: scenario.params().physics.max_speed,
        }
    }

    fn span(&self) -> Vec2 {
        self.max - self.min
    }

    /// `(p - min) / (max - min)`, clamped; returns how many components were clamped.
    pub fn absolute(&self, p: Vec2) -> (Vec2, usize) {
        let span = self.span();
        clamp_unit(Vec2::new((p.x - self.min.x) / span.x, (p.y - self.min.y) / span.y))
    }

    /// `(d + span) / (2 span)`, clamped.
    pub fn relative(&self, d: Vec2) -> (Vec2, usize) {
        let span = self.span();
        clamp_unit(Vec2::new(
            (d.x + span.x) / (2.0 * span.x),
            (d.y + span.y) / (2.0 * span.y),
        ))
    }

    pub fn velocity(&self, v: Vec2) -> (Vec2, usize) {
        let s = self.max_speed;
        clamp_unit(Vec2::new((v.x + s) / (2.0 * s), (v.y + s) / (2.0 * s)))
    }
}

fn clamp_unit(v: Vec2) -> (Vec2, usize) {
    let clamped = usize::from(!(0.0..=1.0).contains(&v.x)) + usize::from(!(0.0..=1.0).contains(&v.y));
    (v.clamp(Vec2::ZERO, Vec2::new(1.0, 1.0)), clamped)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationVector {
    pub values: Vec<f64>,
    /// Entries that fell outside the normalization range and were clamped.
    pub clamped: usize,
}

enum Frame {
    Absolute,
    Relative(Vec2),
}

struct Writer<'a> {
    config: &'a ObservationConfig,
    norm: Normalizer,
    out: Vec<f64>,
    clamped: usize,
}

impl Writer<'_> {
    fn point(&mut self, p: Vec2, frame: &Frame) {
        let raw = match frame {
            Frame::Absolute => p,
            Frame::Relative(origin) => p - *origin,
        };
        let v = if self.config.normalize {
            let (v, c) = match frame {
                Frame::Absolute => self.norm.absolute(raw),
                Frame::Relative(_) => self.norm.relative(raw),
            };
            self.clamped += c;
            v
        } else {
            raw
        };
        self.out.push(v.x);
        self.out.push(v.y);
    }

    /// An entity given by its center and bounding half extents.
    fn entity(&mut self, center: Vec2, half: Vec2, frame: &Frame) {
        match self.config.entity_representation {
            EntityRepresentation::Center => self.point(center, frame),
            EntityRepresentation::TwoCorners => {
                self.point(center - half, frame);
                self.point(center + half, frame);
            }
        }
    }

    fn rect(&mut self, rect: &RectSpec, frame: &Frame) {
        self.entity(rect.center, rect.half_extents, frame);
    }

    fn velocity(&mut self, v: Vec2) {
        let v = if self.config.normalize {
            let (v, c) = self.norm.velocity(v);
            self.clamped += c;
            v
        } else {
            v
        };
        self.out.push(v.x);
        self.out.push(v.y);
    }

    fn flag(&mut self, on: bool) {
        self.out.push(if on { 1.0 } else { 0.0 });
    }
}

/// Builds the observation of `agent` from the current state.
pub fn build_observation(
    scenario: &Scenario,
    state: &ScenarioState,
    agent: usize,
    config: &ObservationConfig,
) -> ObservationVector {
    let layout = scenario.layout();
    let r = layout.agent_radius;
    let agent_half = Vec2::new(r, r);
    let own = state.agent_position(agent);
    let rel = Frame::Relative(own);
    let mut w = Writer {
        config,
        norm: Normalizer::for_scenario(scenario),
        out: Vec::with_capacity(config.dim_for(layout)),
        clamped: 0,
    };

    w.entity(own, agent_half, &Frame::Absolute);
    w.flag(state.agents[agent].has_part);
    if config.include_velocities {
        w.velocity(state.agent_velocity(agent));
    }
    let horizon = scenario.episode_length() as f64;
    for (spec, machine) in layout.machines.iter().zip(&state.machines) {
        w.rect(&spec.rect(), &rel);
        w.flag(machine.ready);
        if config.include_time_since_ready {
            let steps = f64::from(machine.uncollected_steps);
            w.out.push(if config.normalize { (steps / horizon).min(1.0) } else { steps });
        }
    }
    w.rect(&layout.storage.rect(), &rel);
    for other in (0..state.num_agents()).filter(|&k| k != agent) {
        w.entity(state.agent_position(other), agent_half, &rel);
        w.flag(state.agents[other].has_part);
        if config.include_velocities {
            w.velocity(state.agent_velocity(other));
        }
    }
    if config.include_blockers {
        for b in &layout.blockers {
            w.rect(b, &rel);
        }
    }
    if config.include_walls {
        for wall in layout.walls() {
            w.rect(&wall, &rel);
        }
    }
    debug_assert_eq!(w.out.len(), config.dim_for(layout));
    ObservationVector {
        values: w.out,
        clamped: w.clamped,
    }
}
