//! Greedy evaluation of a saved checkpoint.

use std::path::Path;

use tending_core::metrics::{aggregate, write_episode_csv, EpisodeMetrics, EpisodeRow};
use tending_core::AggregateReport;
use tending_mappo::{evaluate, load_policy};
use tending_nn::Checkpoint;

use crate::config::ExperimentConfig;
use crate::error::RunnerError;

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub episodes: Vec<EpisodeMetrics>,
    pub report: AggregateReport,
}

/// Runs `episodes` argmax episodes of the checkpointed policy on the
/// configuration's environment. Reset seeds derive from `seed` only.
pub fn run_eval(checkpoint: &Path, config: &ExperimentConfig, episodes: usize, seed: u64) -> Result<EvalOutcome, RunnerError> {
    let spec = config.env_spec().map_err(|e| RunnerError::Invalid {
        path: checkpoint.to_path_buf(),
        problems: vec![e],
    })?;
    let ckpt = Checkpoint::load(checkpoint).map_err(|e| RunnerError::Training {
        context: format!("loading {}", checkpoint.display()),
        source: e.into(),
    })?;
    let policy = load_policy(&ckpt, &spec).map_err(RunnerError::training(format!("loading {}", checkpoint.display())))?;
    let metrics = evaluate(&policy, &spec, episodes, config.train.num_envs, seed).map_err(RunnerError::training("evaluation"))?;
    let report = aggregate(std::slice::from_ref(&metrics), episodes).map_err(|e| RunnerError::Data(e.to_string()))?;
    Ok(EvalOutcome { episodes: metrics, report })
}

pub fn write_eval(dir: &Path, seed: u64, outcome: &EvalOutcome) -> Result<(), RunnerError> {
    std::fs::create_dir_all(dir).map_err(RunnerError::io(format!("creating {}", dir.display())))?;
    let rows: Vec<EpisodeRow> = outcome
        .episodes
        .iter()
        .enumerate()
        .map(|(i, m)| EpisodeRow::new(seed, i as u64, m))
        .collect();
    let path = dir.join("eval.csv");
    let file = std::fs::File::create(&path).map_err(RunnerError::io(format!("creating {}", path.display())))?;
    write_episode_csv(std::io::BufWriter::new(file), &rows, true).map_err(RunnerError::csv(format!("writing {}", path.display())))?;
    let path = dir.join("eval.txt");
    std::fs::write(&path, format!("{}\n", outcome.report)).map_err(RunnerError::io(format!("writing {}", path.display())))
}
