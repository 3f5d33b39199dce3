//! Machine-tending environment for multi-agent reinforcement learning.
//!
//! Mobile agents move as force-driven discs in a planar workshop, pick parts
//! from production machines once they are ready and deliver them to a storage
//! area. The crate is split bottom-up:
//!
//! - [`geometry`]: the [`Vec2`] primitive.
//! - [`world`]: damped point-mass integration and circle/rectangle contacts.
//! - [`layout`]: static scenario geometry and its validation.
//! - [`scenario`]: production timers, pick/place resolution, episode lifecycle.
//! - [`observation`]: per-agent observation vectors and their ablation toggles.
//! - [`reward`]: per-component rewards and their ablation toggles.
//! - [`metrics`]: episode metrics, utilization rates and seed aggregation.
//! - [`trace`]: line-delimited episode traces for replay.

pub mod geometry;
pub mod layout;
pub mod metrics;
pub mod observation;
pub mod reward;
pub mod scenario;
pub mod trace;
pub mod world;

pub use geometry::Vec2;
pub use layout::{LayoutError, LayoutSpec, MachineSpec, RectSpec, StorageSpec};
pub use metrics::{AggregateReport, EpisodeMetrics, MetricsError};
pub use observation::{EntityRepresentation, ObservationConfig, ObservationVector};
pub use reward::{RewardBreakdown, RewardConfig, RewardError};
pub use scenario::{Scenario, ScenarioError, ScenarioState, StepEvents};
pub use world::{PhysicsParams, WorldError};

/// Number of discrete actions available to every agent.
pub const NUM_ACTIONS: usize = 5;
