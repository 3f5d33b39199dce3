//! Static scenario geometry.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec2;
use crate::world::point_rect_distance;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LayoutError {
    #[error("invalid layout:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
}

/// An axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RectSpec {
    pub center: Vec2,
    pub half_extents: Vec2,
}

impl RectSpec {
    pub fn new(center: Vec2, half_extents: Vec2) -> Self {
        Self { center, half_extents }
    }

    pub fn min(&self) -> Vec2 {
        self.center - self.half_extents
    }

    pub fn max(&self) -> Vec2 {
        self.center + self.half_extents
    }

    /// Lower-left and upper-right corners.
    pub fn corners(&self) -> [Vec2; 2] {
        [self.min(), self.max()]
    }

    /// True when the interiors intersect; shared edges do not count.
    pub fn overlaps(&self, other: &RectSpec) -> bool {
        let (a0, a1, b0, b1) = (self.min(), self.max(), other.min(), other.max());
        a0.x < b1.x && b0.x < a1.x && a0.y < b1.y && b0.y < a1.y
    }

    /// True when `p` lies strictly inside; points within 1e-9 of a face count as outside.
    pub fn contains_strictly(&self, p: Vec2) -> bool {
        const EDGE: f64 = 1e-9;
        let d = p - self.center;
        d.x.abs() < self.half_extents.x - EDGE && d.y.abs() < self.half_extents.y - EDGE
    }

    pub fn distance_to(&self, p: Vec2) -> f64 {
        point_rect_distance(p, self.center, self.half_extents)
    }
}

/// A production machine: a solid rectangle plus the point agents must reach to pick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineSpec {
    pub center: Vec2,
    pub half_extents: Vec2,
    /// Pick-zone anchor, normally on the machine's unblocked face.
    pub anchor: Vec2,
}

impl MachineSpec {
    pub fn rect(&self) -> RectSpec {
        RectSpec::new(self.center, self.half_extents)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorageSpec {
    pub center: Vec2,
    pub half_extents: Vec2,
    /// Target point for the storage distance signal.
    pub anchor: Vec2,
}

impl StorageSpec {
    pub fn rect(&self) -> RectSpec {
        RectSpec::new(self.center, self.half_extents)
    }
}

/// Immutable geometry of one scenario instance.
///
/// The walkable interior is `[-width/2, width/2] x [-height/2, height/2]`;
/// the four boundary walls sit just outside it with thickness
/// `wall_thickness`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutSpec {
    pub width: f64,
    pub height: f64,
    pub wall_thickness: f64,
    pub agent_radius: f64,
    pub spawns: Vec<Vec2>,
    pub machines: Vec<MachineSpec>,
    #[serde(default)]
    pub blockers: Vec<RectSpec>,
    pub storage: StorageSpec,
}

impl Default for LayoutSpec {
    /// Three agents idle along the top edge, two machines whose upper faces
    /// are covered by blockers, and a storage shelf at the bottom.
    fn default() -> Self {
        Self {
            width: 2.0,
            height: 2.0,
            wall_thickness: 0.2,
            agent_radius: 0.05,
            spawns: vec![
                Vec2::new(-0.3, 0.8),
                Vec2::new(0.0, 0.8),
                Vec2::new(0.3, 0.8),
            ],
            machines: vec![
                MachineSpec {
                    center: Vec2::new(-0.55, -0.2),
                    half_extents: Vec2::new(0.15, 0.1),
                    anchor: Vec2::new(-0.4, -0.2),
                },
                MachineSpec {
                    center: Vec2::new(0.55, -0.2),
                    half_extents: Vec2::new(0.15, 0.1),
                    anchor: Vec2::new(0.4, -0.2),
                },
            ],
            blockers: vec![
                RectSpec::new(Vec2::new(-0.55, -0.04), Vec2::new(0.2, 0.06)),
                RectSpec::new(Vec2::new(0.55, -0.04), Vec2::new(0.2, 0.06)),
            ],
            storage: StorageSpec {
                center: Vec2::new(0.0, -0.75),
                half_extents: Vec2::new(0.2, 0.1),
                anchor: Vec2::new(0.0, -0.65),
            },
        }
    }
}

impl LayoutSpec {
    pub fn num_agents(&self) -> usize {
        self.spawns.len()
    }

    pub fn num_machines(&self) -> usize {
        self.machines.len()
    }

    /// Walkable interior as `(min, max)`.
    pub fn interior(&self) -> (Vec2, Vec2) {
        let half = Vec2::new(self.width / 2.0, self.height / 2.0);
        (-half, half)
    }

    /// Box enclosing the interior and the walls.
    pub fn outer_bounds(&self) -> (Vec2, Vec2) {
        let half = Vec2::new(
            self.width / 2.0 + self.wall_thickness,
            self.height / 2.0 + self.wall_thickness,
        );
        (-half, half)
    }

    /// Left, right, bottom, top boundary walls.
    pub fn walls(&self) -> [RectSpec; 4] {
        let (w, h, t) = (self.width / 2.0, self.height / 2.0, self.wall_thickness);
        let side = Vec2::new(t / 2.0, h + t);
        let cap = Vec2::new(w + t, t / 2.0);
        [
            RectSpec::new(Vec2::new(-w - t / 2.0, 0.0), side),
            RectSpec::new(Vec2::new(w + t / 2.0, 0.0), side),
            RectSpec::new(Vec2::new(0.0, -h - t / 2.0), cap),
            RectSpec::new(Vec2::new(0.0, h + t / 2.0), cap),
        ]
    }

    /// Every interior static rectangle with a label, in body order
    /// (machines, blockers, storage).
    pub fn interior_statics(&self) -> Vec<(String, RectSpec)> {
        let mut out = Vec::new();
        for (i, m) in self.machines.iter().enumerate() {
            out.push((format!("machine {i}"), m.rect()));
        }
        for (i, b) in self.blockers.iter().enumerate() {
            out.push((format!("blocker {i}"), *b));
        }
        out.push(("storage".to_string(), self.storage.rect()));
        out
    }

    /// Collects every violation instead of stopping at the first.
    pub fn validate(&self) -> Result<(), LayoutError> {
        let mut problems = Vec::new();
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.width) || !positive(self.height) {
            problems.push(format!(
                "world size must be positive, got {} x {}",
                self.width, self.height
            ));
        }
        if !positive(self.wall_thickness) {
            problems.push(format!("wall_thickness must be positive, got {}", self.wall_thickness));
        }
        if !positive(self.agent_radius) {
            problems.push(format!("agent_radius must be positive, got {}", self.agent_radius));
        }
        if self.spawns.is_empty() {
            problems.push("at least one agent spawn is required".to_string());
        }
        if self.machines.is_empty() {
            problems.push("at least one machine is required".to_string());
        }
        if !problems.is_empty() {
            return Err(LayoutError::Invalid(problems));
        }

        let (lo, hi) = self.interior();
        let statics = self.interior_statics();
        for (name, rect) in &statics {
            if !(positive(rect.half_extents.x) && positive(rect.half_extents.y)) {
                problems.push(format!("{name} has non-positive half extents"));
            }
            let (a, b) = (rect.min(), rect.max());
            if a.x < lo.x || a.y < lo.y || b.x > hi.x || b.y > hi.y {
                problems.push(format!("{name} extends outside the world interior"));
            }
        }
        for i in 0..statics.len() {
            for j in (i + 1)..statics.len() {
                if statics[i].1.overlaps(&statics[j].1) {
                    problems.push(format!("{} overlaps {}", statics[i].0, statics[j].0));
                }
            }
        }

        let r = self.agent_radius;
        for (i, s) in self.spawns.iter().enumerate() {
            if s.x - r < lo.x || s.x + r > hi.x || s.y - r < lo.y || s.y + r > hi.y {
                problems.push(format!("spawn {i} is not inside the world interior"));
            }
            for (name, rect) in &statics {
                if rect.distance_to(*s) <= r {
                    problems.push(format!("spawn {i} collides with {name}"));
                }
            }
            for (j, other) in self.spawns.iter().enumerate().skip(i + 1) {
                if s.distance(*other) <= 2.0 * r {
                    problems.push(format!("spawn {i} collides with spawn {j}"));
                }
            }
        }

        let mut anchors: Vec<(String, Vec2)> = self
            .machines
            .iter()
            .enumerate()
            .map(|(i, m)| (format!("machine {i} anchor"), m.anchor))
            .collect();
        anchors.push(("storage anchor".to_string(), self.storage.anchor));
        for (name, anchor) in &anchors {
            if anchor.x < lo.x || anchor.x > hi.x || anchor.y < lo.y || anchor.y > hi.y {
                problems.push(format!("{name} lies outside the world interior"));
            }
            for (other, rect) in &statics {
                if rect.contains_strictly(*anchor) {
                    problems.push(format!("{name} lies inside {other}"));
                }
            }
        }

        if problems.is_empty() {
            Ok(())
        } else {
            Err(LayoutError::Invalid(problems))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_layout_is_valid() {
        let layout = LayoutSpec::default();
        layout.validate().unwrap();
        assert_eq!(layout.num_agents(), 3);
        assert_eq!(layout.num_machines(), 2);
    }

    #[test]
    fn machine_overlapping_storage_is_rejected() {
        let mut layout = LayoutSpec::default();
        layout.storage.center = layout.machines[0].center;
        let err = layout.validate().unwrap_err();
        let LayoutError::Invalid(problems) = err;
        assert!(problems.iter().any(|p| p == "machine 0 overlaps storage"), "{problems:?}");
    }

    #[test]
    fn all_violations_are_listed() {
        let mut layout = LayoutSpec::default();
        layout.spawns[0] = Vec2::new(5.0, 5.0);
        layout.machines[1].anchor = layout.blockers[0].center;
        let LayoutError::Invalid(problems) = layout.validate().unwrap_err();
        assert!(problems.iter().any(|p| p.contains("spawn 0")));
        assert!(problems.iter().any(|p| p.contains("machine 1 anchor lies inside blocker 0")));
    }

    #[test]
    fn walls_enclose_interior() {
        let layout = LayoutSpec::default();
        let walls = layout.walls();
        let (lo, hi) = layout.interior();
        assert_eq!(walls[0].max().x, lo.x);
        assert_eq!(walls[1].min().x, hi.x);
        assert_eq!(walls[2].max().y, lo.y);
        assert_eq!(walls[3].min().y, hi.y);
    }

    #[test]
    fn layout_round_trips_through_json() {
        let layout = LayoutSpec::default();
        let text = serde_json::to_string(&layout).unwrap();
        let back: LayoutSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, layout);
    }
}
