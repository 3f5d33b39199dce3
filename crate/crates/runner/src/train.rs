//! Training runs: per-seed artifacts, checkpoints and resume.
//!
//! A run directory looks like
//!
//! ```text
//! <out>/manifest.json      resolved configuration, version, start time, seed paths
//! <out>/config.toml        the resolved configuration, reloadable with `train`
//! <out>/report.txt         final-window aggregate over all seeds
//! <out>/seed-<s>/episodes.csv
//! <out>/seed-<s>/updates.csv
//! <out>/seed-<s>/checkpoints/ep-<episodes>.ckpt, latest.ckpt, final.ckpt
//! <out>/seed-<s>/trace.jsonl   one greedy episode of the final policy
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use tending_core::metrics::{read_episode_csv, write_episode_csv, EpisodeRow};
use tending_core::trace::TraceWriter;
use tending_core::AggregateReport;
use tending_mappo::{record_trace, MappoError, RoundReport, Trainer, UpdateStats};

use crate::config::ExperimentConfig;
use crate::error::RunnerError;
use crate::report::aggregate_rows;

pub const MANIFEST: &str = "manifest.json";
pub const EPISODES_CSV: &str = "episodes.csv";
pub const UPDATES_CSV: &str = "updates.csv";
pub const TRACE: &str = "trace.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedPaths {
    pub seed: u64,
    pub dir: PathBuf,
    pub episodes_csv: PathBuf,
    pub updates_csv: PathBuf,
    pub checkpoints: PathBuf,
    pub trace: PathBuf,
}

impl SeedPaths {
    pub fn new(out: &Path, seed: u64) -> Self {
        let dir = out.join(format!("seed-{seed}"));
        Self {
            seed,
            episodes_csv: dir.join(EPISODES_CSV),
            updates_csv: dir.join(UPDATES_CSV),
            checkpoints: dir.join("checkpoints"),
            trace: dir.join(TRACE),
            dir,
        }
    }

    pub fn latest(&self) -> PathBuf {
        self.checkpoints.join("latest.ckpt")
    }

    pub fn final_checkpoint(&self) -> PathBuf {
        self.checkpoints.join("final.ckpt")
    }

    pub fn interval_checkpoint(&self, episodes: u64) -> PathBuf {
        self.checkpoints.join(format!("ep-{episodes:06}.ckpt"))
    }
}

/// Written once before training starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub version: String,
    /// `git rev-parse HEAD` of the working directory, when available.
    pub commit: Option<String>,
    /// Seconds since the Unix epoch.
    pub started_at: u64,
    pub config: ExperimentConfig,
    pub seeds: Vec<SeedPaths>,
}

/// One CSV row per PPO update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateRow {
    pub seed: u64,
    pub update: u64,
    pub episodes_done: u64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub ratio_mean: f64,
    pub actor_grad_norm: f64,
    pub critic_grad_norm: f64,
    pub mean_return: f64,
}

impl UpdateRow {
    fn new(seed: u64, update: u64, episodes_done: u64, s: &UpdateStats) -> Self {
        Self {
            seed,
            update,
            episodes_done,
            actor_loss: s.actor_loss,
            critic_loss: s.critic_loss,
            entropy: s.entropy,
            approx_kl: s.approx_kl,
            clip_fraction: s.clip_fraction,
            ratio_mean: s.ratio_mean,
            actor_grad_norm: s.actor_grad_norm,
            critic_grad_norm: s.critic_grad_norm,
            mean_return: s.mean_return,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub out: Option<PathBuf>,
    pub resume: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub out: PathBuf,
    pub report: AggregateReport,
}

fn io_err(context: String) -> impl FnOnce(std::io::Error) -> RunnerError {
    RunnerError::io(context)
}

fn git_commit() -> Option<String> {
    let out = std::process::Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()?;
    out.status
        .success()
        .then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
        .filter(|s| !s.is_empty())
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or_default()
}

/// Writes through a temporary file so an interrupted save never leaves a
/// truncated checkpoint behind.
fn save_checkpoint(trainer: &Trainer, path: &Path) -> Result<(), RunnerError> {
    let tmp = path.with_extension("tmp");
    trainer
        .save(&tmp)
        .map_err(RunnerError::training(format!("writing {}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(io_err(format!("moving checkpoint to {}", path.display())))
}

fn read_csv_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, RunnerError> {
    let file = File::open(path).map_err(io_err(format!("opening {}", path.display())))?;
    csv::Reader::from_reader(BufReader::new(file))
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(RunnerError::csv(format!("reading {}", path.display())))
}

fn write_csv_rows<T: Serialize>(path: &Path, rows: &[T], append: bool) -> Result<(), RunnerError> {
    let exists = path.exists() && fs::metadata(path).map(|m| m.len() > 0).unwrap_or(false);
    let file = OpenOptions::new()
        .create(true)
        .append(append)
        .write(true)
        .truncate(!append)
        .open(path)
        .map_err(io_err(format!("opening {}", path.display())))?;
    let mut writer = csv::WriterBuilder::new()
        .has_headers(!(append && exists))
        .from_writer(BufWriter::new(file));
    for row in rows {
        writer
            .serialize(row)
            .map_err(RunnerError::csv(format!("writing {}", path.display())))?;
    }
    writer
        .flush()
        .map_err(io_err(format!("writing {}", path.display())))
}

pub fn read_episode_rows(path: &Path) -> Result<Vec<EpisodeRow>, RunnerError> {
    let file = File::open(path).map_err(io_err(format!("opening {}", path.display())))?;
    read_episode_csv(BufReader::new(file)).map_err(RunnerError::csv(format!("reading {}", path.display())))
}

pub fn read_update_rows(path: &Path) -> Result<Vec<UpdateRow>, RunnerError> {
    read_csv_rows(path)
}

fn dir_is_empty(dir: &Path) -> bool {
    match fs::read_dir(dir) {
        Ok(mut entries) => entries.next().is_none(),
        Err(_) => true,
    }
}

/// Trains every seed of `config` and writes the aggregate report.
pub fn run_train(config: &ExperimentConfig, options: &TrainOptions) -> Result<TrainOutcome, RunnerError> {
    let out = options.out.clone().unwrap_or_else(|| config.output_dir.clone());
    let manifest_path = out.join(MANIFEST);
    let spec = config.env_spec().map_err(|e| RunnerError::Invalid {
        path: out.clone(),
        problems: vec![e],
    })?;

    if options.resume {
        if !manifest_path.is_file() {
            return Err(RunnerError::Data(format!(
                "cannot resume: {} does not exist",
                manifest_path.display()
            )));
        }
        let text = fs::read_to_string(&manifest_path).map_err(io_err(format!("reading {}", manifest_path.display())))?;
        let manifest: RunManifest = serde_json::from_str(&text)
            .map_err(|e| RunnerError::Data(format!("{}: {e}", manifest_path.display())))?;
        let (a, b) = (&manifest.config, config);
        let same_env = a.layout() == b.layout()
            && a.scenario == b.scenario
            && a.observation == b.observation
            && a.reward == b.reward
            && a.metrics == b.metrics;
        if a.seeds != b.seeds || !same_env {
            return Err(RunnerError::Invalid {
                path: manifest_path,
                problems: vec!["resumed configuration differs from the run's manifest in seeds or environment".to_string()],
            });
        }
    } else {
        if !dir_is_empty(&out) {
            return Err(RunnerError::OutputExists(out));
        }
        fs::create_dir_all(&out).map_err(io_err(format!("creating {}", out.display())))?;
        let mut resolved = config.clone();
        resolved.layout = Some(config.layout());
        let manifest = RunManifest {
            name: config.name.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            commit: git_commit(),
            started_at: unix_now(),
            config: resolved.clone(),
            seeds: config.seeds.iter().map(|&s| SeedPaths::new(&out, s)).collect(),
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&manifest_path, json).map_err(io_err(format!("writing {}", manifest_path.display())))?;
        fs::write(out.join("config.toml"), resolved.to_toml()).map_err(io_err(format!("writing config in {}", out.display())))?;
    }

    let mut runs = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let paths = SeedPaths::new(&out, seed);
        train_seed(config, &spec, &paths, options.resume)?;
        runs.push(read_episode_rows(&paths.episodes_csv)?);
    }
    let window = config.eval_window.min(runs.iter().map(Vec::len).min().unwrap_or(0));
    let report = aggregate_rows(&runs, window)?;
    let text = format!("{}\n{report}\n", config.name);
    fs::write(out.join("report.txt"), &text).map_err(io_err(format!("writing report in {}", out.display())))?;
    Ok(TrainOutcome { out, report })
}

fn train_seed(
    config: &ExperimentConfig,
    spec: &tending_mappo::EnvSpec,
    paths: &SeedPaths,
    resume: bool,
) -> Result<(), RunnerError> {
    fs::create_dir_all(&paths.checkpoints).map_err(io_err(format!("creating {}", paths.checkpoints.display())))?;
    let seed = paths.seed;
    let latest = paths.latest();
    let mut trainer = if resume && latest.is_file() {
        let trainer = Trainer::load(&latest, spec.clone(), Some(config.train))
            .map_err(RunnerError::training(format!("resuming from {}", latest.display())))?;
        truncate_logs(paths, trainer.episodes_done, trainer.updates)?;
        log::info!("seed {seed}: resuming at episode {}", trainer.episodes_done);
        trainer
    } else {
        for p in [&paths.episodes_csv, &paths.updates_csv] {
            if p.exists() {
                fs::remove_file(p).map_err(io_err(format!("removing {}", p.display())))?;
            }
        }
        Trainer::new(spec.clone(), config.train, seed).map_err(RunnerError::training(format!("seed {seed}")))?
    };

    let interval = config.checkpoint_interval;
    let started = Instant::now();
    let on_round = |t: &Trainer, round: &RoundReport| -> Result<(), RunnerError> {
        let rows: Vec<EpisodeRow> = round
            .episodes
            .iter()
            .map(|e| EpisodeRow::new(seed, e.episode, &e.metrics))
            .collect();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&paths.episodes_csv)
            .map_err(io_err(format!("opening {}", paths.episodes_csv.display())))?;
        let header = file.metadata().map(|m| m.len() == 0).unwrap_or(true);
        write_episode_csv(BufWriter::new(file), &rows, header)
            .map_err(RunnerError::csv(format!("writing {}", paths.episodes_csv.display())))?;
        let updates: Vec<UpdateRow> = round
            .updates
            .iter()
            .map(|(u, s)| UpdateRow::new(seed, *u, t.episodes_done, s))
            .collect();
        write_csv_rows(&paths.updates_csv, &updates, true)?;

        let before = t.episodes_done - round.episodes.len() as u64;
        if t.episodes_done / interval > before / interval {
            save_checkpoint(t, &paths.interval_checkpoint(t.episodes_done))?;
        }
        save_checkpoint(t, &latest)?;

        let n = rows.len().max(1) as f64;
        let mean = |f: fn(&EpisodeRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let entropy = updates.iter().map(|u| u.entropy).sum::<f64>() / updates.len().max(1) as f64;
        log::info!(
            "seed {seed} episode {}/{} collected {:.2} delivered {:.2} collisions {:.1} return {:.2} entropy {:.3} ({:.0}s)",
            t.episodes_done,
            config.episodes,
            mean(|r| f64::from(r.collected)),
            mean(|r| f64::from(r.delivered)),
            mean(|r| f64::from(r.collisions)),
            mean(|r| r.return_total),
            entropy,
            started.elapsed().as_secs_f64()
        );
        Ok(())
    };

    let mut failure = None;
    while trainer.episodes_done < config.episodes {
        match trainer.train_round(config.episodes - trainer.episodes_done) {
            Ok(round) => on_round(&trainer, &round)?,
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    if let Some(err) = failure {
        if let MappoError::NonFinite { .. } = err {
            dump_diagnostic(&trainer, paths, &err)?;
        }
        return Err(RunnerError::Training {
            context: format!("seed {seed}"),
            source: err,
        });
    }

    save_checkpoint(&trainer, &paths.final_checkpoint())?;
    save_checkpoint(&trainer, &latest)?;
    let trace = record_trace(&trainer.policy, spec, seed).map_err(RunnerError::training("recording trace"))?;
    write_trace(&paths.trace, &trace)?;
    Ok(())
}

pub fn write_trace(path: &Path, trace: &tending_core::trace::Trace) -> Result<(), RunnerError> {
    let file = File::create(path).map_err(io_err(format!("creating {}", path.display())))?;
    let header = trace.header.as_ref().expect("recorded traces carry a header");
    let ctx = || format!("writing {}", path.display());
    let mut writer = TraceWriter::new(BufWriter::new(file), header).map_err(|e| RunnerError::Data(format!("{}: {e}", ctx())))?;
    for step in &trace.steps {
        writer
            .record(step)
            .map_err(|e| RunnerError::Data(format!("{}: {e}", ctx())))?;
    }
    writer
        .finish()
        .map_err(|e| RunnerError::Data(format!("{}: {e}", ctx())))?;
    Ok(())
}

/// Drops log rows written after the checkpoint a run resumes from.
fn truncate_logs(paths: &SeedPaths, episodes_done: u64, updates: u64) -> Result<(), RunnerError> {
    if paths.episodes_csv.exists() {
        let rows: Vec<EpisodeRow> = read_episode_rows(&paths.episodes_csv)?
            .into_iter()
            .filter(|r| r.episode < episodes_done)
            .collect();
        let file = File::create(&paths.episodes_csv).map_err(io_err(format!("rewriting {}", paths.episodes_csv.display())))?;
        write_episode_csv(BufWriter::new(file), &rows, true)
            .map_err(RunnerError::csv(format!("rewriting {}", paths.episodes_csv.display())))?;
    }
    if paths.updates_csv.exists() {
        let rows: Vec<UpdateRow> = read_update_rows(&paths.updates_csv)?
            .into_iter()
            .filter(|r| r.update < updates)
            .collect();
        write_csv_rows(&paths.updates_csv, &rows, false)?;
    }
    Ok(())
}

/// Keeps the failing state for inspection next to the partial logs.
fn dump_diagnostic(trainer: &Trainer, paths: &SeedPaths, err: &MappoError) -> Result<(), RunnerError> {
    let mut text = format!(
        "{err}\nseed {}\nepisodes completed {}\nupdates completed {}\n",
        paths.seed, trainer.episodes_done, trainer.updates
    );
    let bad: Vec<&str> = trainer
        .policy
        .store
        .iter()
        .filter(|(_, p)| !p.value.is_finite())
        .map(|(_, p)| p.name.as_str())
        .collect();
    text.push_str(&format!("non-finite parameters: {}\n", if bad.is_empty() { "none".to_string() } else { bad.join(", ") }));
    let path = paths.dir.join("diagnostic.txt");
    let mut file = File::create(&path).map_err(io_err(format!("creating {}", path.display())))?;
    file.write_all(text.as_bytes())
        .map_err(io_err(format!("writing {}", path.display())))?;
    save_checkpoint(trainer, &paths.checkpoints.join("nonfinite.ckpt"))
}
