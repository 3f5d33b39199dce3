//! Episode metrics, utilization rates and cross-seed aggregation.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reward::RewardBreakdown;
use crate::scenario::StepEvents;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("machine {machine} yielded {parts} parts, above the per-machine maximum {max}")]
    AboveCapacity { machine: usize, parts: f64, max: f64 },
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("no episodes to aggregate")]
    Empty,
    #[error("window of {window} episodes exceeds a stream of {len}")]
    WindowTooLarge { window: usize, len: usize },
}

/// How an agent-agent collision enters the collision total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollisionCounting {
    /// Each involved agent counts the collision once.
    #[default]
    PerAgent,
    /// Each contact onset counts once.
    PerEvent,
}

/// Per-machine and average machine utilization.
pub fn machine_utilization(parts: &[f64], parts_per_machine_max: f64) -> Result<(Vec<f64>, f64), MetricsError> {
    if !(parts_per_machine_max > 0.0) {
        return Err(MetricsError::NonPositive("parts_per_machine_max"));
    }
    if parts.is_empty() {
        return Err(MetricsError::Empty);
    }
    for (machine, &p) in parts.iter().enumerate() {
        if p > parts_per_machine_max {
            return Err(MetricsError::AboveCapacity {
                machine,
                parts: p,
                max: parts_per_machine_max,
            });
        }
    }
    let per: Vec<f64> = parts.iter().map(|p| p / parts_per_machine_max).collect();
    let avg = per.iter().sum::<f64>() / per.len() as f64;
    Ok((per, avg))
}

/// Per-agent and average agent utilization against the fair share `parts_max / N`.
pub fn agent_utilization(parts: &[f64], parts_max: f64) -> Result<(Vec<f64>, f64), MetricsError> {
    if parts.is_empty() {
        return Err(MetricsError::NonPositive("agent count"));
    }
    if !(parts_max > 0.0) {
        return Err(MetricsError::NonPositive("parts_max"));
    }
    let share = parts_max / parts.len() as f64;
    let per: Vec<f64> = parts.iter().map(|p| p / share).collect();
    let avg = per.iter().sum::<f64>() / per.len() as f64;
    Ok((per, avg))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub collected: u32,
    pub delivered: u32,
    pub collisions: u32,
    pub per_machine: Vec<u32>,
    pub per_agent: Vec<u32>,
    pub avr_mu: f64,
    pub avr_au: f64,
    /// Sum over agents and steps of the total reward.
    pub return_total: f64,
    /// Same sum split by reward component.
    pub component_returns: [f64; 7],
}

/// Builds [`EpisodeMetrics`] from a stream of step events and rewards.
#[derive(Debug, Clone)]
pub struct EpisodeAccumulator {
    num_agents: usize,
    counting: CollisionCounting,
    metrics: EpisodeMetrics,
}

impl EpisodeAccumulator {
    pub fn new(num_agents: usize, num_machines: usize, counting: CollisionCounting) -> Self {
        Self {
            num_agents,
            counting,
            metrics: EpisodeMetrics {
                per_machine: vec![0; num_machines],
                per_agent: vec![0; num_agents],
                ..EpisodeMetrics::default()
            },
        }
    }

    pub fn record(&mut self, events: &StepEvents, rewards: Option<&RewardBreakdown>) {
        let m = &mut self.metrics;
        for pick in &events.picks {
            m.collected += 1;
            m.per_machine[pick.machine] += 1;
            m.per_agent[pick.agent] += 1;
        }
        m.delivered += events.places.len() as u32;
        for onset in events.onsets() {
            let agents = [onset.body_a, onset.body_b]
                .iter()
                .filter(|&&b| b < self.num_agents)
                .count() as u32;
            m.collisions += match self.counting {
                CollisionCounting::PerAgent => agents,
                CollisionCounting::PerEvent => u32::from(agents > 0),
            };
        }
        if let Some(rewards) = rewards {
            for agent in &rewards.agents {
                m.return_total += agent.total;
                for (acc, c) in m.component_returns.iter_mut().zip(agent.components()) {
                    *acc += c;
                }
            }
        }
    }

    pub fn finish(mut self, parts_per_machine_max: u32) -> Result<EpisodeMetrics, MetricsError> {
        let cap = f64::from(parts_per_machine_max);
        let per_machine: Vec<f64> = self.metrics.per_machine.iter().map(|&p| f64::from(p)).collect();
        let per_agent: Vec<f64> = self.metrics.per_agent.iter().map(|&p| f64::from(p)).collect();
        self.metrics.avr_mu = machine_utilization(&per_machine, cap)?.1;
        self.metrics.avr_au = agent_utilization(&per_agent, cap * per_machine.len() as f64)?.1;
        Ok(self.metrics)
    }
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} ({:.2})", self.mean, self.std)
    }
}

/// Averages the last `window` values of every seed, then summarizes across seeds.
pub fn aggregate_values(runs: &[Vec<f64>], window: usize) -> Result<Summary, MetricsError> {
    if runs.is_empty() || runs.iter().any(|r| r.is_empty()) {
        return Err(MetricsError::Empty);
    }
    if window == 0 {
        return Err(MetricsError::NonPositive("window"));
    }
    let mut seed_means = Vec::with_capacity(runs.len());
    for run in runs {
        if window > run.len() {
            return Err(MetricsError::WindowTooLarge {
                window,
                len: run.len(),
            });
        }
        let tail = &run[run.len() - window..];
        seed_means.push(tail.iter().sum::<f64>() / window as f64);
    }
    Ok(Summary::of(&seed_means))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub seeds: usize,
    pub window: usize,
    pub collected: Summary,
    pub delivered: Summary,
    pub collisions: Summary,
    pub avr_mu: Summary,
    pub avr_au: Summary,
    pub return_total: Summary,
}

/// Aggregates per-seed episode streams over their final `window` episodes.
pub fn aggregate(runs: &[Vec<EpisodeMetrics>], window: usize) -> Result<AggregateReport, MetricsError> {
    let column = |f: fn(&EpisodeMetrics) -> f64| -> Vec<Vec<f64>> {
        runs.iter().map(|r| r.iter().map(f).collect()).collect()
    };
    Ok(AggregateReport {
        seeds: runs.len(),
        window,
        collected: aggregate_values(&column(|m| f64::from(m.collected)), window)?,
        delivered: aggregate_values(&column(|m| f64::from(m.delivered)), window)?,
        collisions: aggregate_values(&column(|m| f64::from(m.collisions)), window)?,
        avr_mu: aggregate_values(&column(|m| m.avr_mu), window)?,
        avr_au: aggregate_values(&column(|m| m.avr_au), window)?,
        return_total: aggregate_values(&column(|m| m.return_total), window)?,
    })
}

impl fmt::Display for AggregateReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "Mean (std) over the last {} episodes of {} seed(s)",
            self.window, self.seeds
        )?;
        writeln!(f, "+-------------+------------------+")?;
        writeln!(f, "| Metric      | Value            |")?;
        writeln!(f, "+-------------+------------------+")?;
        for (name, s) in [
            ("Collected", self.collected),
            ("Delivered", self.delivered),
            ("Collisions", self.collisions),
            ("Avr(MU)", self.avr_mu),
            ("Avr(AU)", self.avr_au),
            ("Return", self.return_total),
        ] {
            writeln!(f, "| {:<11} | {:<16} |", name, s.to_string())?;
        }
        write!(f, "+-------------+------------------+")
    }
}

/// One CSV row per episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub seed: u64,
    pub episode: u64,
    pub collected: u32,
    pub delivered: u32,
    pub collisions: u32,
    pub avr_mu: f64,
    pub avr_au: f64,
    pub return_total: f64,
    pub return_pick: f64,
    pub return_place: f64,
    pub return_collision: f64,
    pub return_progress_machine: f64,
    pub return_progress_storage: f64,
    pub return_uncollected: f64,
    pub return_time: f64,
}

impl EpisodeRow {
    pub fn new(seed: u64, episode: u64, m: &EpisodeMetrics) -> Self {
        let c = m.component_returns;
        Self {
            seed,
            episode,
            collected: m.collected,
            delivered: m.delivered,
            collisions: m.collisions,
            avr_mu: m.avr_mu,
            avr_au: m.avr_au,
            return_total: m.return_total,
            return_pick: c[0],
            return_place: c[1],
            return_collision: c[2],
            return_progress_machine: c[3],
            return_progress_storage: c[4],
            return_uncollected: c[5],
            return_time: c[6],
        }
    }
}

/// Writes episode rows as CSV; the header is emitted only when `header` is set.
pub fn write_episode_csv<W: Write>(out: W, rows: &[EpisodeRow], header: bool) -> csv::Result<()> {
    let mut writer = csv::WriterBuilder::new().has_headers(header).from_writer(out);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_episode_csv<R: std::io::Read>(input: R) -> csv::Result<Vec<EpisodeRow>> {
    csv::Reader::from_reader(input).deserialize().collect()
}
