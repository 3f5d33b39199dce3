use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use tending_runner::config::{load_config, load_sweep, ExperimentConfig};
use tending_runner::error::RunnerError;
use tending_runner::{eval, replay, report, train};

/// Multi-agent machine-tending training workbench.
#[derive(Debug, Parser)]
#[command(name = "tending", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Overrides {
    /// Train this single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Episode budget per seed.
    #[arg(long)]
    episodes: Option<u64>,
    /// Accepted for scripting; runs are always single-threaded and bit-reproducible.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train every seed of an experiment configuration.
    Train {
        config: PathBuf,
        /// Output directory; defaults to the configuration's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue an interrupted run from each seed's latest checkpoint.
        #[arg(long)]
        resume: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Greedy evaluation of a checkpoint on a configuration's environment.
    Eval {
        checkpoint: PathBuf,
        config: PathBuf,
        /// Number of episodes; defaults to the configuration's eval_episodes.
        #[arg(long)]
        episodes: Option<usize>,
        /// Root seed of the evaluation resets.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write eval.csv and eval.txt here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        deterministic: bool,
    },
    /// Train every experiment listed in a sweep file, one directory each.
    Ablate {
        sweep: PathBuf,
        /// Parent directory of the run directories; defaults to the sweep's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Print the event timeline of a trace.
    Replay {
        trace: PathBuf,
        /// Write one PNG per step into this directory.
        #[arg(long)]
        frames: Option<PathBuf>,
        /// Re-simulate the logged actions and compare with the logged outcomes.
        #[arg(long)]
        verify: bool,
    },
    /// Print the observation field names of a configuration.
    Schema { config: PathBuf },
    /// Aggregate report of a finished or partial run directory.
    Report {
        run: PathBuf,
        /// Final episodes per seed to average; defaults to the configured window.
        #[arg(long)]
        window: Option<usize>,
    },
}

fn apply(mut config: ExperimentConfig, overrides: &Overrides, path: &Path) -> Result<ExperimentConfig, RunnerError> {
    if let Some(seed) = overrides.seed {
        config.seeds = vec![seed];
    }
    if let Some(episodes) = overrides.episodes {
        config.episodes = episodes;
        config.eval_window = config.eval_window.min(episodes.max(1) as usize);
    }
    let problems = config.validate();
    if problems.is_empty() {
        Ok(config)
    } else {
        Err(RunnerError::Invalid {
            path: path.to_path_buf(),
            problems,
        })
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            out,
            resume,
            overrides,
        } => {
            let cfg = apply(load_config(&config)?, &overrides, &config)?;
            let outcome = train::run_train(&cfg, &train::TrainOptions { out, resume })?;
            println!("{}\n{}", outcome.out.display(), outcome.report);
        }
        Command::Eval {
            checkpoint,
            config,
            episodes,
            seed,
            out,
            deterministic: _,
        } => {
            let cfg = load_config(&config)?;
            let episodes = episodes.unwrap_or(cfg.eval_episodes);
            let outcome = eval::run_eval(&checkpoint, &cfg, episodes, seed)?;
            if let Some(dir) = out {
                eval::write_eval(&dir, seed, &outcome)?;
            }
            println!("{}", outcome.report);
        }
        Command::Ablate { sweep, out, overrides } => {
            let (spec, runs) = load_sweep(&sweep)?;
            let base = out.unwrap_or(spec.output_dir);
            for (stem, cfg) in runs {
                let cfg = apply(cfg, &overrides, &sweep)?;
                let dir = base.join(&stem);
                log::info!("{}: {} -> {}", spec.name, stem, dir.display());
                let outcome = train::run_train(
                    &cfg,
                    &train::TrainOptions {
                        out: Some(dir),
                        resume: false,
                    },
                )
                .with_context(|| format!("sweep entry {stem}"))?;
                println!("{stem}\n{}", outcome.report);
            }
        }
        Command::Replay { trace, frames, verify } => {
            let t = replay::load_trace(&trace)?;
            for line in replay::timeline_lines(&t) {
                println!("{line}");
            }
            if verify {
                match replay::verify(&t)? {
                    None => println!("replay matches {} logged steps", t.steps.len()),
                    Some(step) => {
                        return Err(RunnerError::Data(format!("replay diverges from the log at t={step}")).into());
                    }
                }
            }
            if let Some(dir) = frames {
                let n = replay::export_frames(&t, &dir)?;
                println!("wrote {n} frames to {}", dir.display());
            }
        }
        Command::Schema { config } => {
            let cfg = load_config(&config)?;
            for (i, name) in cfg.observation.schema(&cfg.layout()).iter().enumerate() {
                println!("{i:3} {name}");
            }
        }
        Command::Report { run, window } => {
            println!("{}", report::run_report(&run, window)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err
                .chain()
                .find_map(|e| e.downcast_ref::<RunnerError>())
                .map(|e| e.category().exit_code())
                .unwrap_or(1);
            ExitCode::from(code as u8)
        }
    }
}
