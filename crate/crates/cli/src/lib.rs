//! Subcommands behind the `pragbench` binary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use pragbench_core::orchestrator::{read_lock, RunMetaFile, RECORDS_JSONL, RUN_META_JSON};
use pragbench_core::report::{read_records, read_summary_json};
use pragbench_core::{
    emit_figure_data, emit_summary_tables, load_dataset, parse_method_list, phenomenon_counts,
    reference_counts, run_experiment, save_dataset, score_run_dir_to, synthetic_dataset, Fingerprint,
    Phenomenon, ResponseCache, RunConfig, RunError,
};

#[derive(Debug, Parser)]
#[command(name = "pragbench", version, about = "Zero-shot pragmatic reasoning evaluation harness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an experiment described by a config file.
    Run(RunArgs),
    /// Re-aggregate a run directory from records.jsonl (offline).
    Score {
        #[arg(long = "run")]
        run_dir: PathBuf,
        /// Write reports here instead of into the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-emit tables and figure data from a summary.json (offline).
    Report {
        #[arg(long)]
        summary: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_svg: bool,
    },
    /// Inspect the response cache.
    Cache {
        #[command(subcommand)]
        command: CacheCommand,
    },
    /// Dataset utilities.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Comma-separated subset, e.g. `grice,simple`.
    #[arg(long)]
    pub methods: Option<String>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    /// Shuffle answer options with the master seed.
    #[arg(long)]
    pub shuffle: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub samples: Option<u32>,
}

#[derive(Debug, Subcommand)]
pub enum CacheCommand {
    Stats {
        #[arg(long)]
        cache: PathBuf,
        /// Also report how much of this run is covered by the cache.
        #[arg(long = "run")]
        run_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Write a synthetic dataset in the loader's format.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Instances per phenomenon; the reference sizes are used if absent.
        #[arg(long)]
        per_phenomenon: Option<usize>,
        #[arg(long, default_value_t = 4)]
        options: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Load and validate a dataset, printing per-phenomenon counts.
    Validate { path: PathBuf },
}

/// Failure with a process exit status.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        CliError {
            code: e.exit_code(),
            message: e.to_string(),
        }
    }
}

fn fail(code: i32, message: impl Into<String>) -> CliError {
    CliError {
        code,
        message: message.into(),
    }
}

/// Applies command-line overrides on top of a loaded config.
pub fn apply_overrides(cfg: &mut RunConfig, a: &RunArgs) -> Result<(), CliError> {
    if let Some(m) = &a.methods {
        cfg.methods = parse_method_list(m).map_err(|e| fail(2, e.to_string()))?;
    }
    if let Some(d) = &a.dataset {
        cfg.dataset = d.clone();
    }
    if let Some(o) = &a.output {
        cfg.output_dir = o.clone();
    }
    if let Some(c) = &a.cache {
        cfg.cache_path = Some(c.clone());
    }
    if let Some(n) = a.max_in_flight {
        cfg.max_in_flight = n;
    }
    if a.shuffle {
        cfg.shuffle.enabled = true;
    }
    if let Some(s) = a.seed {
        cfg.shuffle.master_seed = s;
    }
    if let Some(s) = a.samples {
        cfg.samples = s;
    }
    Ok(())
}

pub fn execute(cli: Cli, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let w = |e: std::io::Error| fail(1, e.to_string());
    match cli.command {
        Command::Run(args) => {
            let mut cfg = RunConfig::load(&args.config).map_err(RunError::from)?;
            apply_overrides(&mut cfg, &args)?;
            let outcome = run_experiment(&cfg)?;
            writeln!(
                out,
                "wrote {} records ({} failed trials) to {}",
                outcome.records,
                outcome.failures,
                outcome.run_dir.display()
            )
            .map_err(w)?;
            writeln!(
                out,
                "cache: {} hits, {} misses",
                outcome.cache.hits, outcome.cache.misses
            )
            .map_err(w)?;
        }
        Command::Score { run_dir, out: dest } => {
            let dest = dest.unwrap_or_else(|| run_dir.clone());
            let s = score_run_dir_to(&run_dir, &dest)?;
            writeln!(out, "scored {} records into {}", s.meta.record_count, dest.display()).map_err(w)?;
        }
        Command::Report { summary, out: dest, no_svg } => {
            let s = read_summary_json(&summary).map_err(|e| fail(1, e.to_string()))?;
            emit_summary_tables(&s, &dest).map_err(|e| fail(1, e.to_string()))?;
            emit_figure_data(&s, &dest, !no_svg).map_err(|e| fail(1, e.to_string()))?;
            writeln!(out, "reports written to {}", dest.display()).map_err(w)?;
        }
        Command::Cache {
            command: CacheCommand::Stats { cache, run_dir },
        } => cache_stats(&cache, run_dir.as_deref(), out)?,
        Command::Dataset { command } => match command {
            DatasetCommand::Synth {
                out: path,
                per_phenomenon,
                options,
                seed,
            } => {
                if !(1..=6).contains(&options) {
                    return Err(fail(2, "--options must be between 1 and 6"));
                }
                let counts = match per_phenomenon {
                    Some(n) => Phenomenon::ALL.iter().map(|&p| (p, n)).collect(),
                    None => reference_counts(),
                };
                let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                let ds = synthetic_dataset(&name, &counts, options, seed);
                save_dataset(&ds, &path).map_err(|e| fail(3, e.to_string()))?;
                writeln!(out, "wrote {} instances to {}", ds.len(), path.display()).map_err(w)?;
            }
            DatasetCommand::Validate { path } => {
                let ds = load_dataset(&path).map_err(|e| fail(3, e.to_string()))?;
                for (p, n) in phenomenon_counts(&ds) {
                    writeln!(out, "{p}\t{n}").map_err(w)?;
                }
                writeln!(out, "total\t{}", ds.len()).map_err(w)?;
            }
        },
    }
    Ok(())
}

fn cache_stats(cache_path: &Path, run_dir: Option<&Path>, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let w = |e: std::io::Error| fail(1, e.to_string());
    if !cache_path.exists() {
        return Err(fail(2, format!("no cache at {}", cache_path.display())));
    }
    let cache = ResponseCache::open(cache_path).map_err(|e| fail(1, e.to_string()))?;
    let summary = cache.summary();
    writeln!(out, "cache: {}", summary.path.display()).map_err(w)?;
    writeln!(out, "entries: {}", summary.entries).map_err(w)?;
    writeln!(out, "bytes: {}", summary.bytes).map_err(w)?;
    for (model, n) in &summary.per_model {
        writeln!(out, "model {model}: {n}").map_err(w)?;
    }
    let Some(run_dir) = run_dir else { return Ok(()) };

    read_lock(run_dir)?;
    let records = read_records(run_dir.join(RECORDS_JSONL)).map_err(|e| fail(1, e.to_string()))?;
    let mut wanted: BTreeMap<&str, bool> = BTreeMap::new();
    for r in &records {
        for fp in &r.fingerprints {
            wanted.insert(fp, false);
        }
    }
    for (fp, present) in wanted.iter_mut() {
        *present = cache.peek(&Fingerprint::from_hex(*fp)).is_some();
    }
    let covered = wanted.values().filter(|p| **p).count();
    writeln!(out, "run requests: {}", wanted.len()).map_err(w)?;
    writeln!(out, "run requests cached: {covered}").map_err(w)?;
    let meta_path = run_dir.join(RUN_META_JSON);
    if let Ok(text) = fs::read_to_string(&meta_path) {
        let meta: RunMetaFile = serde_json::from_str(&text).map_err(|e| fail(1, format!("{}: {e}", meta_path.display())))?;
        writeln!(out, "last run hits: {}", meta.cache.hits).map_err(w)?;
        writeln!(out, "last run misses: {}", meta.cache.misses).map_err(w)?;
        let rate = meta.cache.hit_rate().map_or("n/a".to_string(), |r| format!("{r:.4}"));
        writeln!(out, "last run hit rate: {rate}").map_err(w)?;
    }
    Ok(())
}
