//! Experiment and sweep configuration files (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tending_core::metrics::CollisionCounting;
use tending_core::scenario::ScenarioParams;
use tending_core::{LayoutError, LayoutSpec, ObservationConfig, RewardConfig, Scenario};
use tending_mappo::{EnvSpec, TrainConfig};

use crate::error::RunnerError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub collision_counting: CollisionCounting,
}

/// Everything needed to reproduce a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    /// Training episodes per seed.
    pub episodes: u64,
    /// Final training episodes averaged in the report.
    pub eval_window: usize,
    /// Greedy episodes run by `eval` when no count is given.
    pub eval_episodes: usize,
    /// Episodes between checkpoints.
    pub checkpoint_interval: u64,
    pub output_dir: PathBuf,
    /// Layout file, relative to this file; excludes an inline `[layout]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layout_file: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layout: Option<LayoutSpec>,
    pub scenario: ScenarioParams,
    pub observation: ObservationConfig,
    pub reward: RewardConfig,
    pub metrics: MetricsConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".to_string(),
            seeds: vec![1, 2, 3],
            episodes: 2000,
            eval_window: 100,
            eval_episodes: 200,
            checkpoint_interval: 500,
            output_dir: PathBuf::from("runs/experiment"),
            layout_file: None,
            layout: None,
            scenario: ScenarioParams::default(),
            observation: ObservationConfig::default(),
            reward: RewardConfig::default(),
            metrics: MetricsConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// The layout in effect: inline, or the default one.
    pub fn layout(&self) -> LayoutSpec {
        self.layout.clone().unwrap_or_default()
    }

    /// Every violated constraint. Assumes any layout file is already inlined.
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.layout_file.is_some() && self.layout.is_some() {
            problems.push("set either layout_file or [layout], not both".to_string());
        }
        if self.seeds.is_empty() {
            problems.push("seeds must not be empty".to_string());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            problems.push("seeds must be distinct".to_string());
        }
        if self.episodes == 0 {
            problems.push("episodes must be at least 1".to_string());
        }
        if self.eval_window == 0 || self.eval_window as u64 > self.episodes {
            problems.push(format!(
                "eval_window ({}) must be between 1 and episodes ({})",
                self.eval_window, self.episodes
            ));
        }
        if self.eval_episodes == 0 {
            problems.push("eval_episodes must be at least 1".to_string());
        }
        if self.checkpoint_interval == 0 {
            problems.push("checkpoint_interval must be at least 1".to_string());
        }
        if let Err(LayoutError::Invalid(p)) = self.layout().validate() {
            problems.extend(p.into_iter().map(|p| format!("layout: {p}")));
        }
        problems.extend(self.scenario.validate().into_iter().map(|p| format!("scenario: {p}")));
        problems.extend(self.reward.validate().into_iter().map(|p| format!("reward: {p}")));
        problems.extend(self.train.validate(self.scenario.episode_length));
        problems
    }

    /// Environment definition. Call only on a validated configuration.
    pub fn env_spec(&self) -> Result<EnvSpec, String> {
        let scenario = Scenario::new(self.layout(), self.scenario).map_err(|e| e.to_string())?;
        Ok(EnvSpec {
            scenario,
            observation: self.observation,
            reward: self.reward,
            counting: self.metrics.collision_counting,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}

fn read(path: &Path) -> Result<String, RunnerError> {
    std::fs::read_to_string(path).map_err(RunnerError::io(format!("reading {}", path.display())))
}

fn parse<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T, RunnerError> {
    toml::from_str(text).map_err(|e| RunnerError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Parses, inlines the layout file, and validates.
pub fn parse_config(text: &str, path: &Path) -> Result<ExperimentConfig, RunnerError> {
    let mut config: ExperimentConfig = parse(path, text)?;
    let mut problems = Vec::new();
    if let Some(file) = &config.layout_file {
        let file = base_dir(path).join(file);
        if config.layout.is_some() {
            problems.push("set either layout_file or [layout], not both".to_string());
        } else if !file.is_file() {
            problems.push(format!("layout_file {} does not exist", file.display()));
        } else {
            config.layout = Some(parse(&file, &read(&file)?)?);
            config.layout_file = None;
        }
    }
    problems.extend(config.validate());
    problems.dedup();
    if problems.is_empty() {
        Ok(config)
    } else {
        Err(RunnerError::Invalid {
            path: path.to_path_buf(),
            problems,
        })
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, RunnerError> {
    parse_config(&read(path)?, path)
}

/// A list of experiment files run one after another.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub name: String,
    pub output_dir: PathBuf,
    /// Experiment files, relative to the sweep file.
    pub configs: Vec<PathBuf>,
}

pub fn load_sweep(path: &Path) -> Result<(SweepConfig, Vec<(String, ExperimentConfig)>), RunnerError> {
    let sweep: SweepConfig = parse(path, &read(path)?)?;
    if sweep.configs.is_empty() {
        return Err(RunnerError::Invalid {
            path: path.to_path_buf(),
            problems: vec!["configs must not be empty".to_string()],
        });
    }
    let mut runs = Vec::with_capacity(sweep.configs.len());
    for rel in &sweep.configs {
        let file = base_dir(path).join(rel);
        let stem = file
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| rel.display().to_string());
        runs.push((stem, load_config(&file)?));
    }
    Ok((sweep, runs))
}
