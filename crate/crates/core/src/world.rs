//! Planar kinematic world.
//!
//! Agents are force-driven discs with multiplicative velocity damping; every
//! other body is an immovable axis-aligned rectangle. Contacts are resolved by
//! positional projection followed by removal of the approaching normal
//! velocity, which keeps the simulation deterministic and free of stiff
//! penalty forces.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec2;

/// Two bodies closer than this (negative penetration of at most this size)
/// are still considered touching.
pub const CONTACT_SLOP: f64 = 1e-6;

const MAX_RESOLVE_ITERS: usize = 200;
const RESOLVE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("invalid action id {0}; expected 0..=4")]
    InvalidAction(usize),
    #[error("non-finite force ({x}, {y}) applied to body {body}")]
    NonFiniteForce { body: usize, x: f64, y: f64 },
    #[error("time step must be positive and finite, got {0}")]
    InvalidTimestep(f64),
    #[error("expected {expected} forces, got {got}")]
    ForceCount { expected: usize, got: usize },
}

/// Integration constants shared by every agent in a world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsParams {
    pub dt: f64,
    pub damping: f64,
    pub force_gain: f64,
    pub max_speed: f64,
    pub agent_mass: f64,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        Self {
            dt: 0.1,
            damping: 0.25,
            force_gain: 1.0,
            max_speed: 0.5,
            agent_mass: 1.0,
        }
    }
}

impl PhysicsParams {
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if !(self.dt.is_finite() && self.dt > 0.0) {
            problems.push(format!("physics.dt must be > 0, got {}", self.dt));
        }
        if !(0.0..1.0).contains(&self.damping) {
            problems.push(format!("physics.damping must be in [0, 1), got {}", self.damping));
        }
        if !(self.force_gain.is_finite() && self.force_gain >= 0.0) {
            problems.push(format!("physics.force_gain must be >= 0, got {}", self.force_gain));
        }
        if !(self.max_speed.is_finite() && self.max_speed > 0.0) {
            problems.push(format!("physics.max_speed must be > 0, got {}", self.max_speed));
        }
        if !(self.agent_mass.is_finite() && self.agent_mass > 0.0) {
            problems.push(format!("physics.agent_mass must be > 0, got {}", self.agent_mass));
        }
        problems
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Circle { radius: f64 },
    Rect { half_extents: Vec2 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BodyKind {
    Agent,
    Machine,
    Blocker,
    Storage,
    Wall,
}

impl BodyKind {
    pub fn name(self) -> &'static str {
        match self {
            BodyKind::Agent => "agent",
            BodyKind::Machine => "machine",
            BodyKind::Blocker => "blocker",
            BodyKind::Storage => "storage",
            BodyKind::Wall => "wall",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodySpec {
    pub shape: Shape,
    pub mass: f64,
    pub kind: BodyKind,
}

impl BodySpec {
    pub fn agent(radius: f64, mass: f64) -> Self {
        Self {
            shape: Shape::Circle { radius },
            mass,
            kind: BodyKind::Agent,
        }
    }

    /// An immovable rectangle.
    pub fn fixed(kind: BodyKind, half_extents: Vec2) -> Self {
        Self {
            shape: Shape::Rect { half_extents },
            mass: f64::INFINITY,
            kind,
        }
    }

    pub fn is_static(&self) -> bool {
        self.kind != BodyKind::Agent
    }

    fn inv_mass(&self) -> f64 {
        if self.is_static() {
            0.0
        } else {
            1.0 / self.mass
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KinematicState {
    pub position: Vec2,
    pub velocity: Vec2,
}

impl KinematicState {
    pub fn at_rest(position: Vec2) -> Self {
        Self {
            position,
            velocity: Vec2::ZERO,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Body {
    pub spec: BodySpec,
    pub state: KinematicState,
}

/// A touching or overlapping pair, `body_a < body_b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactEvent {
    pub body_a: usize,
    pub body_b: usize,
    /// True when the pair was not in contact on the previous step.
    pub onset: bool,
    /// Overlap depth; values in `(-CONTACT_SLOP, 0]` mean touching.
    pub penetration: f64,
}

/// Pairs that were in contact on the previous step.
pub type ContactSet = BTreeSet<(usize, usize)>;

/// Maps a discrete action id to a force.
///
/// `0` is no force, `1`/`2` push left/right and `3`/`4` push down/up.
pub fn action_to_force(action: usize, force_gain: f64) -> Result<Vec2, WorldError> {
    let unit = match action {
        0 => Vec2::ZERO,
        1 => Vec2::new(-1.0, 0.0),
        2 => Vec2::new(1.0, 0.0),
        3 => Vec2::new(0.0, -1.0),
        4 => Vec2::new(0.0, 1.0),
        other => return Err(WorldError::InvalidAction(other)),
    };
    Ok(unit * force_gain)
}

/// One semi-implicit Euler step with multiplicative damping and a speed cap.
pub fn integrate(
    state: KinematicState,
    force: Vec2,
    mass: f64,
    params: &PhysicsParams,
) -> Result<KinematicState, WorldError> {
    if !(params.dt.is_finite() && params.dt > 0.0) {
        return Err(WorldError::InvalidTimestep(params.dt));
    }
    if !force.is_finite() {
        return Err(WorldError::NonFiniteForce {
            body: 0,
            x: force.x,
            y: force.y,
        });
    }
    let dt = params.dt;
    let mut velocity = (state.velocity + force * (dt / mass)) * (1.0 - params.damping);
    let speed = velocity.length();
    if speed > params.max_speed {
        velocity = velocity * (params.max_speed / speed);
    }
    Ok(KinematicState {
        position: state.position + velocity * dt,
        velocity,
    })
}

/// Contact normal (pointing from `b` towards `a`) and signed penetration depth.
#[derive(Debug, Clone, Copy)]
struct Manifold {
    normal: Vec2,
    depth: f64,
}

fn circle_circle(ca: Vec2, ra: f64, cb: Vec2, rb: f64) -> Manifold {
    let d = ca - cb;
    let dist = d.length();
    let normal = if dist > 0.0 {
        d * (1.0 / dist)
    } else {
        Vec2::new(1.0, 0.0)
    };
    Manifold {
        normal,
        depth: ra + rb - dist,
    }
}

/// Normal points from the rectangle towards the circle.
fn circle_rect(center: Vec2, radius: f64, rect_center: Vec2, half: Vec2) -> Manifold {
    let local = center - rect_center;
    let inside = local.x.abs() <= half.x && local.y.abs() <= half.y;
    if inside {
        // Push out through the nearest face.
        let dx = half.x - local.x.abs();
        let dy = half.y - local.y.abs();
        let sign = |v: f64| if v < 0.0 { -1.0 } else { 1.0 };
        if dx <= dy {
            Manifold {
                normal: Vec2::new(sign(local.x), 0.0),
                depth: radius + dx,
            }
        } else {
            Manifold {
                normal: Vec2::new(0.0, sign(local.y)),
                depth: radius + dy,
            }
        }
    } else {
        let closest = local.clamp(-half, half);
        let diff = local - closest;
        let dist = diff.length();
        Manifold {
            normal: diff * (1.0 / dist),
            depth: radius - dist,
        }
    }
}

/// Distance from a point to an axis-aligned rectangle (zero inside).
pub fn point_rect_distance(point: Vec2, rect_center: Vec2, half: Vec2) -> f64 {
    let local = point - rect_center;
    (local - local.clamp(-half, half)).length()
}

fn manifold(a: &Body, b: &Body) -> Option<Manifold> {
    let pa = a.state.position;
    let pb = b.state.position;
    match (a.spec.shape, b.spec.shape) {
        (Shape::Circle { radius: ra }, Shape::Circle { radius: rb }) => {
            Some(circle_circle(pa, ra, pb, rb))
        }
        (Shape::Circle { radius }, Shape::Rect { half_extents }) => {
            Some(circle_rect(pa, radius, pb, half_extents))
        }
        (Shape::Rect { half_extents }, Shape::Circle { radius }) => {
            let m = circle_rect(pb, radius, pa, half_extents);
            Some(Manifold {
                normal: -m.normal,
                depth: m.depth,
            })
        }
        (Shape::Rect { .. }, Shape::Rect { .. }) => None,
    }
}

fn involves_dynamic(a: &Body, b: &Body) -> bool {
    !(a.spec.is_static() && b.spec.is_static())
}

/// Finds every touching or overlapping pair with at least one agent.
///
/// `onset` is computed against `previous`, the pairs in contact one step ago.
pub fn detect_contacts(bodies: &[Body], previous: &ContactSet) -> Vec<ContactEvent> {
    let mut contacts = Vec::new();
    for i in 0..bodies.len() {
        for j in (i + 1)..bodies.len() {
            if !involves_dynamic(&bodies[i], &bodies[j]) {
                continue;
            }
            if let Some(m) = manifold(&bodies[i], &bodies[j]) {
                if m.depth > -CONTACT_SLOP {
                    contacts.push(ContactEvent {
                        body_a: i,
                        body_b: j,
                        onset: !previous.contains(&(i, j)),
                        penetration: m.depth,
                    });
                }
            }
        }
    }
    contacts
}

fn separate(bodies: &mut [Body], i: usize, j: usize) -> f64 {
    let Some(m) = manifold(&bodies[i], &bodies[j]) else {
        return 0.0;
    };
    if m.depth <= 0.0 {
        return 0.0;
    }
    let inv_a = bodies[i].spec.inv_mass();
    let inv_b = bodies[j].spec.inv_mass();
    let total = inv_a + inv_b;
    if total == 0.0 {
        return 0.0;
    }
    bodies[i].state.position += m.normal * (m.depth * inv_a / total);
    bodies[j].state.position -= m.normal * (m.depth * inv_b / total);
    m.depth
}

fn remove_approach_velocity(bodies: &mut [Body], i: usize, j: usize) {
    let Some(m) = manifold(&bodies[i], &bodies[j]) else {
        return;
    };
    if m.depth <= -CONTACT_SLOP {
        return;
    }
    let inv_a = bodies[i].spec.inv_mass();
    let inv_b = bodies[j].spec.inv_mass();
    let total = inv_a + inv_b;
    if total == 0.0 {
        return;
    }
    let relative = (bodies[i].state.velocity - bodies[j].state.velocity).dot(m.normal);
    if relative >= 0.0 {
        return;
    }
    // Perfectly inelastic along the normal; tangential components untouched.
    bodies[i].state.velocity -= m.normal * (relative * inv_a / total);
    bodies[j].state.velocity += m.normal * (relative * inv_b / total);
}

/// Projects overlapping bodies apart and removes approaching normal velocity.
///
/// Static bodies never move. Corrections between two agents are split by
/// inverse mass. Overlaps created while correcting are picked up and resolved
/// in the same call.
pub fn resolve_contacts(bodies: &mut [Body], contacts: &[ContactEvent]) {
    if contacts.is_empty() {
        return;
    }
    let mut pairs: Vec<(usize, usize)> = contacts.iter().map(|c| (c.body_a, c.body_b)).collect();
    for _ in 0..MAX_RESOLVE_ITERS {
        let mut worst = 0.0f64;
        for &(i, j) in &pairs {
            worst = worst.max(separate(bodies, i, j));
        }
        let mut discovered = false;
        for i in 0..bodies.len() {
            for j in (i + 1)..bodies.len() {
                if !involves_dynamic(&bodies[i], &bodies[j]) || pairs.contains(&(i, j)) {
                    continue;
                }
                if manifold(&bodies[i], &bodies[j]).is_some_and(|m| m.depth > 0.0) {
                    pairs.push((i, j));
                    discovered = true;
                }
            }
        }
        if worst <= RESOLVE_TOLERANCE && !discovered {
            break;
        }
    }
    for &(i, j) in &pairs {
        remove_approach_velocity(bodies, i, j);
    }
}

/// A set of bodies plus the contact memory needed for onset detection.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    bodies: Vec<Body>,
    params: PhysicsParams,
    previous: ContactSet,
}

impl World {
    pub fn new(bodies: Vec<Body>, params: PhysicsParams) -> Self {
        Self {
            bodies,
            params,
            previous: ContactSet::new(),
        }
    }

    pub fn bodies(&self) -> &[Body] {
        &self.bodies
    }

    pub fn params(&self) -> &PhysicsParams {
        &self.params
    }

    pub fn body(&self, index: usize) -> &Body {
        &self.bodies[index]
    }

    pub fn previous_contacts(&self) -> &ContactSet {
        &self.previous
    }

    /// Number of dynamic bodies; they receive forces in index order.
    pub fn dynamic_count(&self) -> usize {
        self.bodies.iter().filter(|b| !b.spec.is_static()).count()
    }

    /// Integrates every dynamic body with its force, then detects and
    /// resolves contacts. Returns the contacts found before resolution.
    pub fn step(&mut self, forces: &[Vec2]) -> Result<Vec<ContactEvent>, WorldError> {
        let expected = self.dynamic_count();
        if forces.len() != expected {
            return Err(WorldError::ForceCount {
                expected,
                got: forces.len(),
            });
        }
        let mut next = Vec::with_capacity(expected);
        let mut forces_iter = forces.iter();
        for (index, body) in self.bodies.iter().enumerate() {
            if body.spec.is_static() {
                continue;
            }
            let force = *forces_iter.next().expect("force count checked");
            let state = integrate(body.state, force, body.spec.mass, &self.params).map_err(
                |e| match e {
                    WorldError::NonFiniteForce { x, y, .. } => WorldError::NonFiniteForce { body: index, x, y },
                    other => other,
                },
            )?;
            next.push((index, state));
        }
        for (index, state) in next {
            self.bodies[index].state = state;
        }
        let contacts = detect_contacts(&self.bodies, &self.previous);
        resolve_contacts(&mut self.bodies, &contacts);
        self.previous = contacts.iter().map(|c| (c.body_a, c.body_b)).collect();
        Ok(contacts)
    }
}
