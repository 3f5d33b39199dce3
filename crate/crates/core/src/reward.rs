//! Componentized per-agent rewards.
//!
//! Each agent's reward is the sum of seven components: pick, place,
//! collision, progress towards the closest ready machine, progress towards
//! storage, the uncollected-part penalty, and the time penalty.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec2;
use crate::scenario::{MachineState, Scenario, ScenarioState, StepEvents};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("inconsistent transition: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncollectedMode {
    /// Penalty proportional to the number of machines holding a ready part.
    #[default]
    Fixed,
    /// Penalty proportional to the summed waiting time of ready parts.
    Increasing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollisionMode {
    /// Penalize the first step of each contact.
    #[default]
    Onset,
    /// Penalize every step a contact persists.
    EveryStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub pick_reward: f64,
    pub place_reward: f64,
    /// Non-positive.
    pub collision_penalty: f64,
    /// Distance-shaping scale.
    pub progress_scale: f64,
    /// Non-positive.
    pub uncollected_scale: f64,
    /// Non-positive.
    pub time_penalty: f64,
    pub share_pick_place: bool,
    pub uncollected_mode: UncollectedMode,
    pub collision_mode: CollisionMode,
    pub enable_time_penalty: bool,
    pub enable_distance_shaping: bool,
    pub enable_uncollected_penalty: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            pick_reward: 1.0,
            place_reward: 2.0,
            collision_penalty: -0.25,
            progress_scale: 0.5,
            uncollected_scale: -0.005,
            time_penalty: -0.01,
            share_pick_place: false,
            uncollected_mode: UncollectedMode::Fixed,
            collision_mode: CollisionMode::Onset,
            enable_time_penalty: true,
            enable_distance_shaping: true,
            enable_uncollected_penalty: true,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        let checks = [
            ("pick_reward", self.pick_reward, 1.0),
            ("place_reward", self.place_reward, 1.0),
            ("progress_scale", self.progress_scale, 1.0),
            ("collision_penalty", self.collision_penalty, -1.0),
            ("uncollected_scale", self.uncollected_scale, -1.0),
            ("time_penalty", self.time_penalty, -1.0),
        ];
        for (name, value, sign) in checks {
            if !value.is_finite() {
                problems.push(format!("reward.{name} must be finite"));
            } else if value * sign < 0.0 {
                let want = if sign > 0.0 { ">= 0" } else { "<= 0" };
                problems.push(format!("reward.{name} must be {want}, got {value}"));
            }
        }
        problems
    }
}

/// One agent's reward split by component.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AgentReward {
    pub pick: f64,
    pub place: f64,
    pub collision: f64,
    pub progress_machine: f64,
    pub progress_storage: f64,
    pub uncollected: f64,
    pub time: f64,
    pub total: f64,
}

impl AgentReward {
    pub const COMPONENTS: [&'static str; 7] = [
        "pick",
        "place",
        "collision",
        "progress_machine",
        "progress_storage",
        "uncollected",
        "time",
    ];

    pub fn components(&self) -> [f64; 7] {
        [
            self.pick,
            self.place,
            self.collision,
            self.progress_machine,
            self.progress_storage,
            self.uncollected,
            self.time,
        ]
    }

    fn finish(mut self) -> Self {
        self.total = self.pick
            + self.place
            + self.collision
            + self.progress_machine
            + self.progress_storage
            + self.uncollected
            + self.time;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub agents: Vec<AgentReward>,
}

pub fn progress_to_machine(prev_dist: f64, curr_dist: f64, has_part: bool, scale: f64) -> f64 {
    if has_part {
        0.0
    } else {
        scale * (prev_dist - curr_dist)
    }
}

pub fn progress_to_storage(prev_dist: f64, curr_dist: f64, has_part: bool, scale: f64) -> f64 {
    if has_part {
        scale * (prev_dist - curr_dist)
    } else {
        0.0
    }
}

/// Shared by every agent; zero when the penalty is disabled.
pub fn uncollected_penalty(machines: &[MachineState], config: &RewardConfig) -> f64 {
    if !config.enable_uncollected_penalty {
        return 0.0;
    }
    match config.uncollected_mode {
        UncollectedMode::Fixed => {
            let waiting = machines.iter().filter(|m| m.ready).count();
            waiting as f64 * config.uncollected_scale
        }
        UncollectedMode::Increasing => {
            let steps: u32 = machines.iter().filter(|m| m.ready).map(|m| m.uncollected_steps).sum();
            f64::from(steps) * config.uncollected_scale
        }
    }
}

/// Ready machine whose anchor is closest to `position`; ties go to the lower index.
pub fn closest_ready_machine(
    scenario: &Scenario,
    machines: &[MachineState],
    position: Vec2,
) -> Option<usize> {
    machines
        .iter()
        .enumerate()
        .filter(|(_, m)| m.ready)
        .map(|(i, _)| (i, scenario.machine_anchor_distance(position, i)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
}

/// Rewards for the transition `prev -> curr` that produced `events`.
///
/// The has-part branch of the progress terms is taken from `prev`. The
/// machine target is the closest ready machine in `curr`, and both distances
/// are measured to that same target.
pub fn compute_rewards(
    scenario: &Scenario,
    prev: &ScenarioState,
    curr: &ScenarioState,
    events: &StepEvents,
    config: &RewardConfig,
) -> Result<RewardBreakdown, RewardError> {
    let n = prev.num_agents();
    if curr.num_agents() != n {
        return Err(RewardError::Inconsistent(format!(
            "agent count changed from {n} to {}",
            curr.num_agents()
        )));
    }
    if curr.t != prev.t + 1 {
        return Err(RewardError::Inconsistent(format!(
            "states at t={} and t={} are not consecutive",
            prev.t, curr.t
        )));
    }
    if curr.machines.len() != prev.machines.len() {
        return Err(RewardError::Inconsistent("machine count changed".to_string()));
    }
    if let Some(bad) = events
        .picks
        .iter()
        .map(|p| p.agent)
        .chain(events.places.iter().copied())
        .find(|&a| a >= n)
    {
        return Err(RewardError::Inconsistent(format!("event names unknown agent {bad}")));
    }

    let shared_uncollected = uncollected_penalty(&curr.machines, config);
    let mut agents = vec![AgentReward::default(); n];
    for (i, r) in agents.iter_mut().enumerate() {
        let own_picks = events.picks.iter().filter(|p| p.agent == i).count();
        let own_places = events.places.iter().filter(|&&a| a == i).count();
        let (picks, places) = if config.share_pick_place {
            (events.picks.len(), events.places.len())
        } else {
            (own_picks, own_places)
        };
        r.pick = picks as f64 * config.pick_reward;
        r.place = places as f64 * config.place_reward;

        let hits = events
            .contacts
            .iter()
            .filter(|c| match config.collision_mode {
                crate::reward::CollisionMode::Onset => c.onset,
                crate::reward::CollisionMode::EveryStep => true,
            })
            .filter(|c| c.body_a == i || c.body_b == i)
            .count();
        r.collision = hits as f64 * config.collision_penalty;

        if config.enable_distance_shaping {
            let had_part = prev.agents[i].has_part;
            let (before, after) = (prev.agent_position(i), curr.agent_position(i));
            if !had_part {
                if let Some(m) = closest_ready_machine(scenario, &curr.machines, after) {
                    r.progress_machine = progress_to_machine(
                        scenario.machine_anchor_distance(before, m),
                        scenario.machine_anchor_distance(after, m),
                        had_part,
                        config.progress_scale,
                    );
                }
            }
            r.progress_storage = progress_to_storage(
                scenario.storage_anchor_distance(before),
                scenario.storage_anchor_distance(after),
                had_part,
                config.progress_scale,
            );
        }

        r.uncollected = shared_uncollected;
        if config.enable_time_penalty && r.pick == 0.0 && r.place == 0.0 && shared_uncollected == 0.0 {
            r.time = config.time_penalty;
        }
        *r = r.finish();
    }
    Ok(RewardBreakdown { agents })
}
