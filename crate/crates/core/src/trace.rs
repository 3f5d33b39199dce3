//! Line-delimited episode traces.
//!
//! The first line is a [`TraceHeader`] holding everything needed to rebuild
//! the scenario; each following line is one [`TraceStep`]. A trace can be
//! rendered as a textual timeline or re-simulated from its logged actions.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec2;
use crate::layout::LayoutSpec;
use crate::scenario::{Pick, Scenario, ScenarioError, ScenarioParams, ScenarioState, StepEvents};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace line {line}: {source} (last valid step: {last_valid})")]
    Corrupt {
        line: usize,
        last_valid: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("trace step {t} follows step {previous}")]
    OutOfOrder { t: usize, previous: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub layout: LayoutSpec,
    pub params: ScenarioParams,
    pub seed: u64,
}

/// Contact onset between two bodies, by body index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Collision {
    pub body_a: usize,
    pub body_b: usize,
}

/// One environment step: the state index it started from, the joint action
/// and the resulting agent positions and events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub t: usize,
    pub actions: Vec<usize>,
    pub positions: Vec<Vec2>,
    pub picks: Vec<Pick>,
    pub places: Vec<usize>,
    pub collisions: Vec<Collision>,
}

impl TraceStep {
    pub fn new(t: usize, actions: &[usize], next: &ScenarioState, events: &StepEvents) -> Self {
        Self {
            t,
            actions: actions.to_vec(),
            positions: (0..next.num_agents()).map(|a| next.agent_position(a)).collect(),
            picks: events.picks.clone(),
            places: events.places.clone(),
            collisions: events
                .onsets()
                .map(|c| Collision {
                    body_a: c.body_a,
                    body_b: c.body_b,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub header: Option<TraceHeader>,
    pub steps: Vec<TraceStep>,
}

/// Streams a trace to any writer.
pub struct TraceWriter<W: Write> {
    out: W,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(mut out: W, header: &TraceHeader) -> Result<Self, TraceError> {
        serde_json::to_writer(&mut out, header)?;
        out.write_all(b"\n")?;
        Ok(Self { out })
    }

    pub fn record(&mut self, step: &TraceStep) -> Result<(), TraceError> {
        serde_json::to_writer(&mut self.out, step)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W, TraceError> {
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Parses a trace. Blank input yields an empty trace.
pub fn read_trace<R: BufRead>(input: R) -> Result<Trace, TraceError> {
    let mut trace = Trace::default();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let last_valid = || match trace.steps.last() {
            Some(s) => format!("t={}", s.t),
            None if trace.header.is_some() => "header".to_string(),
            None => "none".to_string(),
        };
        if trace.header.is_none() {
            let header = serde_json::from_str(&line).map_err(|source| TraceError::Corrupt {
                line: i + 1,
                last_valid: last_valid(),
                source,
            })?;
            trace.header = Some(header);
            continue;
        }
        let step: TraceStep = serde_json::from_str(&line).map_err(|source| TraceError::Corrupt {
            line: i + 1,
            last_valid: last_valid(),
            source,
        })?;
        if let Some(prev) = trace.steps.last() {
            if step.t <= prev.t {
                return Err(TraceError::OutOfOrder {
                    t: step.t,
                    previous: prev.t,
                });
            }
        }
        trace.steps.push(step);
    }
    Ok(trace)
}

/// Event lines such as `t=37 agent 0 picks machine 1`.
pub fn timeline(trace: &Trace) -> Vec<String> {
    let mut lines = Vec::new();
    for step in &trace.steps {
        for p in &step.picks {
            lines.push(format!("t={} agent {} picks machine {}", step.t, p.agent, p.machine));
        }
        for a in &step.places {
            lines.push(format!("t={} agent {} places a part", step.t, a));
        }
        for c in &step.collisions {
            lines.push(format!("t={} body {} collides with body {}", step.t, c.body_a, c.body_b));
        }
    }
    lines
}

/// Re-runs the logged actions from the header's scenario and seed.
pub fn resimulate(header: &TraceHeader, steps: &[TraceStep]) -> Result<Vec<TraceStep>, TraceError> {
    let scenario = Scenario::new(header.layout.clone(), header.params)?;
    let mut state = scenario.reset(header.seed);
    let mut out = Vec::with_capacity(steps.len());
    for step in steps {
        let t = state.t;
        let (next, events) = scenario.step(&state, &step.actions)?;
        out.push(TraceStep::new(t, &step.actions, &next, &events));
        state = next;
    }
    Ok(out)
}
