//! Experiment runner for the machine-tending workbench: configuration
//! files, training runs with checkpoints and CSV logs, greedy evaluation,
//! ablation sweeps and trace replay.

pub mod config;
pub mod error;
pub mod eval;
pub mod replay;
pub mod report;
pub mod train;

pub use config::{load_config, load_sweep, parse_config, ExperimentConfig, MetricsConfig, SweepConfig};
pub use error::{Category, RunnerError};
pub use eval::{run_eval, EvalOutcome};
pub use report::{aggregate_rows, run_report};
pub use train::{run_train, RunManifest, SeedPaths, TrainOptions, TrainOutcome, UpdateRow};
