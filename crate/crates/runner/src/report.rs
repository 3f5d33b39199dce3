//! Aggregates over episode CSVs.

use std::path::Path;

use tending_core::metrics::{aggregate_values, EpisodeRow};
use tending_core::AggregateReport;

use crate::error::RunnerError;
use crate::train::{read_episode_rows, RunManifest, MANIFEST};

/// Final-window mean (std across seeds) of each reported metric.
pub fn aggregate_rows(runs: &[Vec<EpisodeRow>], window: usize) -> Result<AggregateReport, RunnerError> {
    let column = |f: fn(&EpisodeRow) -> f64| -> Vec<Vec<f64>> { runs.iter().map(|r| r.iter().map(f).collect()).collect() };
    let agg = |f: fn(&EpisodeRow) -> f64| aggregate_values(&column(f), window).map_err(|e| RunnerError::Data(e.to_string()));
    Ok(AggregateReport {
        seeds: runs.len(),
        window,
        collected: agg(|r| f64::from(r.collected))?,
        delivered: agg(|r| f64::from(r.delivered))?,
        collisions: agg(|r| f64::from(r.collisions))?,
        avr_mu: agg(|r| r.avr_mu)?,
        avr_au: agg(|r| r.avr_au)?,
        return_total: agg(|r| r.return_total)?,
    })
}

/// Mean of one column over the last `window` rows.
pub fn window_mean(rows: &[EpisodeRow], window: usize, f: fn(&EpisodeRow) -> f64) -> f64 {
    let tail = &rows[rows.len().saturating_sub(window)..];
    tail.iter().map(f).sum::<f64>() / tail.len().max(1) as f64
}

/// Episode rows of every seed recorded in a run directory's manifest.
pub fn load_run(dir: &Path) -> Result<(RunManifest, Vec<Vec<EpisodeRow>>), RunnerError> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(RunnerError::io(format!("reading {}", path.display())))?;
    let manifest: RunManifest =
        serde_json::from_str(&text).map_err(|e| RunnerError::Data(format!("{}: {e}", path.display())))?;
    let mut runs = Vec::new();
    for seed in &manifest.seeds {
        let csv = dir.join(format!("seed-{}", seed.seed)).join(crate::train::EPISODES_CSV);
        runs.push(read_episode_rows(&csv)?);
    }
    Ok((manifest, runs))
}

/// Report for a finished run directory; `window` defaults to the configured one.
pub fn run_report(dir: &Path, window: Option<usize>) -> Result<AggregateReport, RunnerError> {
    let (manifest, runs) = load_run(dir)?;
    let shortest = runs.iter().map(Vec::len).min().unwrap_or(0);
    let window = window.unwrap_or(manifest.config.eval_window).min(shortest);
    aggregate_rows(&runs, window)
}
