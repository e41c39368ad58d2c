//! Experiment runs: configuration, trial fan-out, and the run directory.
//!
//! A run directory holds
//!
//! ```text
//! config.lock        resolved configuration (TOML)
//! records.jsonl      one scored trial per line, sorted
//! failures.jsonl     trials that could not be completed, with causes
//! responses/         raw model output, one file per request fingerprint
//! run_meta.json      timestamps and cache counters
//! summary.json       aggregated summary
//! *.csv, summary.md  report tables and figure data
//! ```
//!
//! Everything except `run_meta.json` is a pure function of the config, the
//! dataset and the cached responses. Reports are always produced by
//! [`score_run_dir`], which reads only `config.lock` and `records.jsonl`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{
    cached_complete, AnswerKey, BackendError, CacheCounters, CacheError, ChatClient, ChatEndpoint,
    CompletionBackend, CompletionRecord, CompletionRequest, GenerationParams, MockBackend,
    MockProfile, MockStyle, ReqwestTransport, ResponseCache, RetryPolicy,
};
use crate::dataset::{derive_seed, load_dataset, shuffle_options, Dataset, DatasetError, Instance, Phenomenon};
use crate::extraction::{extract_answer, Strategy};
use crate::prompts::{load_templates, render_prompt, MethodId, PromptError};
use crate::report::{
    aggregate, emit_figure_data, emit_summary_tables, read_records, write_records, write_summary_json,
    AggregateOptions, EvalSummary, ReportError, SUMMARY_JSON,
};
use crate::stats::{CorrelationMode, RunRecord, DEFAULT_Z};

pub const CONFIG_LOCK: &str = "config.lock";
pub const RECORDS_JSONL: &str = "records.jsonl";
pub const FAILURES_JSONL: &str = "failures.jsonl";
pub const RUN_META_JSON: &str = "run_meta.json";
pub const RESPONSES_DIR: &str = "responses";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("environment variable {0} referenced in config is not set")]
    MissingEnv(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("run aborted after {failures} failed trials of {attempted} attempted: {reason}")]
    CircuitBreak {
        failures: usize,
        attempted: usize,
        reason: String,
    },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl RunError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Prompt(_) => 2,
            RunError::Dataset(_) => 3,
            RunError::CircuitBreak { .. } => 4,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// OpenAI-compatible `/chat/completions` endpoint.
    #[default]
    Openai,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockSettings {
    pub style: MockStyle,
    pub seed: u64,
    pub default_accuracy: f64,
    pub accuracy: BTreeMap<Phenomenon, f64>,
}

impl Default for MockSettings {
    fn default() -> Self {
        MockSettings {
            style: MockStyle::default(),
            seed: 0,
            default_accuracy: 0.75,
            accuracy: BTreeMap::new(),
        }
    }
}

fn default_timeout() -> u64 {
    120
}

fn default_attempts() -> u32 {
    RetryPolicy::default().max_attempts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub model_id: String,
    #[serde(default)]
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    /// Name of the environment variable holding the API key.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub send_repetition_penalty: bool,
    /// 0 disables pacing.
    #[serde(default)]
    pub requests_per_minute: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock: Option<MockSettings>,
}

impl ModelConfig {
    pub fn mock(model_id: impl Into<String>, settings: MockSettings) -> Self {
        ModelConfig {
            model_id: model_id.into(),
            kind: BackendKind::Mock,
            base_url: None,
            api_key_env: None,
            send_repetition_penalty: false,
            requests_per_minute: 0,
            timeout_secs: default_timeout(),
            max_attempts: default_attempts(),
            mock: Some(settings),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShuffleScope {
    /// One permutation per instance, shared by every method and model.
    #[default]
    PerInstance,
    /// A separate permutation per (instance, method, model).
    PerTrial,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShuffleConfig {
    pub enabled: bool,
    pub scope: ShuffleScope,
    pub master_seed: u64,
}

fn default_methods() -> Vec<MethodId> {
    MethodId::ALL.to_vec()
}
fn default_in_flight() -> usize {
    4
}
fn default_threshold() -> f64 {
    0.1
}
fn default_z() -> f64 {
    DEFAULT_Z
}
fn default_samples() -> u32 {
    1
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub output_dir: PathBuf,
    /// Defaults to `cache.jsonl` inside `output_dir`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_path: Option<PathBuf>,
    #[serde(default = "default_methods")]
    pub methods: Vec<MethodId>,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    /// Fraction of planned trials allowed to fail before the run aborts.
    #[serde(default = "default_threshold")]
    pub failure_threshold: f64,
    #[serde(default = "default_z")]
    pub z: f64,
    /// Completions drawn per trial; more than one enables majority voting.
    #[serde(default = "default_samples")]
    pub samples: u32,
    /// Extra draws for trials whose every sample was unparsable.
    #[serde(default)]
    pub requery_unparsed: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern_model: Option<String>,
    #[serde(default)]
    pub correlation_mode: CorrelationMode,
    #[serde(default = "default_true")]
    pub emit_svg: bool,
    #[serde(default)]
    pub params: GenerationParams,
    #[serde(default)]
    pub shuffle: ShuffleConfig,
    /// Per-method template file overrides.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub templates: BTreeMap<MethodId, PathBuf>,
    pub models: Vec<ModelConfig>,
}

/// Replaces every `${NAME}` with the value of environment variable `NAME`.
pub fn interpolate_env(text: &str) -> Result<String, ConfigError> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("${") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after
            .find('}')
            .ok_or_else(|| ConfigError::Parse("unterminated ${ in config".into()))?;
        let name = &after[..end];
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(ConfigError::Parse(format!("bad variable name {name:?}")));
        }
        let value = std::env::var(name).map_err(|_| ConfigError::MissingEnv(name.to_string()))?;
        out.push_str(&value);
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    /// A config with defaults for everything except the required fields.
    pub fn new(dataset: impl Into<PathBuf>, output_dir: impl Into<PathBuf>, models: Vec<ModelConfig>) -> Self {
        RunConfig {
            dataset: dataset.into(),
            output_dir: output_dir.into(),
            cache_path: None,
            methods: default_methods(),
            max_in_flight: default_in_flight(),
            failure_threshold: default_threshold(),
            z: default_z(),
            samples: default_samples(),
            requery_unparsed: 0,
            pattern_model: None,
            correlation_mode: CorrelationMode::default(),
            emit_svg: true,
            params: GenerationParams::default(),
            shuffle: ShuffleConfig::default(),
            templates: BTreeMap::new(),
            models,
        }
    }

    /// Parses TOML after `${VAR}` interpolation. Relative paths are taken
    /// relative to `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let text = interpolate_env(text)?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        resolve(base_dir, &mut cfg.dataset);
        resolve(base_dir, &mut cfg.output_dir);
        if let Some(c) = cfg.cache_path.as_mut() {
            resolve(base_dir, c);
        }
        for p in cfg.templates.values_mut() {
            resolve(base_dir, p);
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::from_toml_str(&text, base)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn cache_path(&self) -> PathBuf {
        self.cache_path
            .clone()
            .unwrap_or_else(|| self.output_dir.join("cache.jsonl"))
    }

    pub fn dataset_name(&self) -> String {
        self.dataset
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }

    /// Normalizes the method list and checks every field.
    pub fn validate(&mut self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.methods.sort();
        self.methods.dedup();
        if self.methods.is_empty() {
            return bad("methods must not be empty".into());
        }
        if self.max_in_flight < 1 {
            return bad("max_in_flight must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.failure_threshold) {
            return bad(format!("failure_threshold must be in [0, 1], got {}", self.failure_threshold));
        }
        if !(self.z.is_finite() && self.z > 0.0) {
            return bad(format!("z must be positive, got {}", self.z));
        }
        if self.samples < 1 {
            return bad("samples must be at least 1".into());
        }
        self.params.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.models.is_empty() {
            return bad("at least one model is required".into());
        }
        let mut ids = BTreeSet::new();
        for m in &self.models {
            if m.model_id.is_empty() {
                return bad("model_id must not be empty".into());
            }
            if !ids.insert(m.model_id.as_str()) {
                return bad(format!("duplicate model_id {:?}", m.model_id));
            }
            if m.max_attempts < 1 {
                return bad(format!("{}: max_attempts must be at least 1", m.model_id));
            }
            match m.kind {
                BackendKind::Openai if m.base_url.is_none() => {
                    return bad(format!("{}: base_url is required for openai models", m.model_id));
                }
                BackendKind::Mock => {
                    let s = m.mock.clone().unwrap_or_default();
                    let all = s.accuracy.values().chain([&s.default_accuracy]);
                    if all.into_iter().any(|a| !(0.0..=1.0).contains(a)) {
                        return bad(format!("{}: mock accuracies must be in [0, 1]", m.model_id));
                    }
                }
                _ => {}
            }
        }
        if let Some(pm) = &self.pattern_model {
            if !ids.contains(pm.as_str()) {
                return bad(format!("pattern_model {pm:?} is not a configured model"));
            }
        }
        Ok(())
    }
}

pub type BackendMap = BTreeMap<String, Arc<dyn CompletionBackend>>;

/// Builds one backend per configured model.
pub fn build_backends(cfg: &RunConfig, dataset: &Dataset) -> Result<BackendMap, RunError> {
    let mut map = BackendMap::new();
    let mut key: Option<AnswerKey> = None;
    for m in &cfg.models {
        let backend: Arc<dyn CompletionBackend> = match m.kind {
            BackendKind::Mock => {
                let s = m.mock.clone().unwrap_or_default();
                let answer_key = key.get_or_insert_with(|| AnswerKey::from_dataset(dataset)).clone();
                Arc::new(MockBackend::new(MockProfile {
                    accuracy: s.accuracy,
                    default_accuracy: s.default_accuracy,
                    style: s.style,
                    seed: s.seed,
                    answer_key,
                }))
            }
            BackendKind::Openai => {
                let api_key = match &m.api_key_env {
                    Some(var) => Some(std::env::var(var).map_err(|_| {
                        ConfigError::Invalid(format!("{}: environment variable {var} is not set", m.model_id))
                    })?),
                    None => None,
                };
                let endpoint = ChatEndpoint {
                    base_url: m.base_url.clone().unwrap_or_default(),
                    api_key,
                    send_repetition_penalty: m.send_repetition_penalty,
                };
                let transport = Arc::new(ReqwestTransport::new(Duration::from_secs(m.timeout_secs))?);
                let retry = RetryPolicy {
                    max_attempts: m.max_attempts,
                    ..RetryPolicy::default()
                };
                Arc::new(ChatClient::new(endpoint, transport, retry).with_rate_limit(m.requests_per_minute))
            }
        };
        map.insert(m.model_id.clone(), backend);
    }
    Ok(map)
}

/// A trial that could not be completed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub instance_id: String,
    pub method: MethodId,
    pub model_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetaFile {
    pub started_at: String,
    pub finished_at: String,
    pub elapsed_ms: u64,
    pub planned_trials: usize,
    pub records: usize,
    pub failures: usize,
    pub cache: CacheCounters,
    pub cache_path: PathBuf,
    pub harness_version: String,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub records: usize,
    pub failures: usize,
    pub cache: CacheCounters,
    pub summary: EvalSummary,
}

struct Trial {
    instance: Instance,
    method: MethodId,
    model_id: String,
    prompt: String,
}

fn plan_trials(cfg: &RunConfig, dataset: &Dataset) -> Result<Vec<Trial>, RunError> {
    let templates = load_templates(&cfg.templates)?;
    let mut trials = Vec::with_capacity(dataset.len() * cfg.methods.len() * cfg.models.len());
    for inst in &dataset.instances {
        for &method in &cfg.methods {
            for model in &cfg.models {
                let instance = if !cfg.shuffle.enabled {
                    inst.clone()
                } else {
                    let seed = match cfg.shuffle.scope {
                        ShuffleScope::PerInstance => derive_seed(cfg.shuffle.master_seed, &[&inst.id]),
                        ShuffleScope::PerTrial => derive_seed(
                            cfg.shuffle.master_seed,
                            &[&inst.id, method.as_str(), &model.model_id],
                        ),
                    };
                    shuffle_options(inst, seed)
                };
                let prompt = render_prompt(&instance, &templates[&method]).text;
                trials.push(Trial {
                    instance,
                    method,
                    model_id: model.model_id.clone(),
                    prompt,
                });
            }
        }
    }
    Ok(trials)
}

/// Draws the configured samples for one trial and scores the majority
/// choice. Ties go to the lowest option number.
fn run_trial(
    t: &Trial,
    backend: &dyn CompletionBackend,
    cache: &ResponseCache,
    cfg: &RunConfig,
) -> Result<(RunRecord, Vec<CompletionRecord>), BackendError> {
    let n = t.instance.options.len();
    let mut completions = Vec::new();
    let mut parsed = Vec::new();
    let max_draws = cfg.samples + cfg.requery_unparsed;
    for sample in 0..max_draws {
        if sample >= cfg.samples && !parsed.is_empty() {
            break;
        }
        let req = CompletionRequest::with_sample(&t.model_id, &t.prompt, cfg.params, sample);
        let rec = cached_complete(backend, &req, cache)?;
        let ex = extract_answer(&rec.response_text, n);
        if let Some(idx) = ex.chosen_index {
            parsed.push((idx, completions.len(), ex.strategy));
        }
        completions.push(rec);
    }
    let mut votes = vec![0usize; n];
    for &(idx, _, _) in &parsed {
        votes[idx] += 1;
    }
    let winner = (!parsed.is_empty()).then(|| {
        let best = *votes.iter().max().expect("non-empty");
        votes.iter().position(|&v| v == best).expect("max exists")
    });
    let (source, strategy) = match winner {
        Some(w) => {
            let &(_, pos, strat) = parsed.iter().find(|(i, _, _)| *i == w).expect("winner was voted");
            (pos, strat)
        }
        None => (completions.len() - 1, Strategy::None),
    };
    let src = &completions[source];
    let mut record = RunRecord::scored(
        &t.instance.id,
        t.instance.phenomenon,
        t.method,
        &t.model_id,
        winner,
        t.instance.gold_index,
        src.input_chars,
        src.output_chars,
    );
    record.option_count = n;
    record.strategy = strategy;
    record.fingerprints = completions.iter().map(|c| c.fingerprint.to_string()).collect();
    Ok((record, completions))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), RunError> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r).expect("row serializes"));
        text.push('\n');
    }
    fs::write(path, text).map_err(io_err(path))
}

/// Loads the config's dataset, builds backends, and runs the experiment.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunOutcome, RunError> {
    let mut cfg = cfg.clone();
    cfg.validate()?;
    let dataset = load_dataset(&cfg.dataset)?;
    let backends = build_backends(&cfg, &dataset)?;
    execute(&cfg, &dataset, &backends)
}

/// Like [`run_experiment`] but with caller-supplied backends keyed by
/// model id. The dataset is still read from `cfg.dataset`.
pub fn run_experiment_with_backends(cfg: &RunConfig, backends: &BackendMap) -> Result<RunOutcome, RunError> {
    let mut cfg = cfg.clone();
    cfg.validate()?;
    let dataset = load_dataset(&cfg.dataset)?;
    execute(&cfg, &dataset, backends)
}

fn execute(cfg: &RunConfig, dataset: &Dataset, backends: &BackendMap) -> Result<RunOutcome, RunError> {
    for m in &cfg.models {
        if !backends.contains_key(&m.model_id) {
            return Err(ConfigError::Invalid(format!("no backend for model {:?}", m.model_id)).into());
        }
    }
    let started = Instant::now();
    let started_at = chrono::Utc::now().to_rfc3339();
    let out = &cfg.output_dir;
    fs::create_dir_all(out.join(RESPONSES_DIR)).map_err(io_err(out))?;
    let lock_text = cfg.to_toml();
    fs::write(out.join(CONFIG_LOCK), &lock_text).map_err(io_err(out))?;

    let cache_path = cfg.cache_path();
    if let Some(parent) = cache_path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let cache = ResponseCache::open(&cache_path)?;
    let trials = plan_trials(cfg, dataset)?;
    let total = trials.len();
    let budget = (cfg.failure_threshold * total as f64).floor() as usize;
    log::info!(
        "{} instances x {} methods x {} models = {total} trials",
        dataset.len(),
        cfg.methods.len(),
        cfg.models.len()
    );

    let stop = AtomicBool::new(false);
    let done = AtomicUsize::new(0);
    let abort_reason: Mutex<Option<String>> = Mutex::new(None);
    let results: Mutex<Vec<(RunRecord, Vec<CompletionRecord>)>> = Mutex::new(Vec::with_capacity(total));
    let failures: Mutex<Vec<TrialFailure>> = Mutex::new(Vec::new());

    thread::scope(|scope| {
        for model in &cfg.models {
            let queue: Vec<&Trial> = trials.iter().filter(|t| t.model_id == model.model_id).collect();
            let next = Arc::new(AtomicUsize::new(0));
            let backend = backends[&model.model_id].as_ref();
            let workers = cfg.max_in_flight.min(queue.len());
            let queue = Arc::new(queue);
            for _ in 0..workers {
                let (queue, next) = (Arc::clone(&queue), Arc::clone(&next));
                let (stop, done, abort_reason, results, failures, cache) =
                    (&stop, &done, &abort_reason, &results, &failures, &cache);
                scope.spawn(move || loop {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(t) = queue.get(i) else { break };
                    match run_trial(t, backend, cache, cfg) {
                        Ok(r) => results.lock().expect("results lock").push(r),
                        Err(e) => {
                            log::warn!("{} / {} / {}: {e}", t.instance.id, t.method, t.model_id);
                            let mut f = failures.lock().expect("failures lock");
                            f.push(TrialFailure {
                                instance_id: t.instance.id.clone(),
                                method: t.method,
                                model_id: t.model_id.clone(),
                                error: e.to_string(),
                            });
                            let reason = if e.is_auth() {
                                Some(format!("{}: {e}", t.model_id))
                            } else if f.len() > budget {
                                Some(format!("failure rate exceeded {}", cfg.failure_threshold))
                            } else {
                                None
                            };
                            if let Some(reason) = reason {
                                abort_reason.lock().expect("abort lock").get_or_insert(reason);
                                stop.store(true, Ordering::SeqCst);
                            }
                        }
                    }
                    let d = done.fetch_add(1, Ordering::SeqCst) + 1;
                    if total >= 10 && d % (total / 10) == 0 {
                        log::info!("{d}/{total} trials done");
                    }
                });
            }
        }
    });
    cache.flush()?;

    let mut failures = failures.into_inner().expect("failures lock");
    failures.sort_by(|a, b| {
        (&a.instance_id, a.method, &a.model_id).cmp(&(&b.instance_id, b.method, &b.model_id))
    });
    write_jsonl(&out.join(FAILURES_JSONL), &failures)?;
    if let Some(reason) = abort_reason.into_inner().expect("abort lock") {
        return Err(RunError::CircuitBreak {
            failures: failures.len(),
            attempted: done.load(Ordering::SeqCst),
            reason,
        });
    }

    let mut results = results.into_inner().expect("results lock");
    results.sort_by(|a, b| a.0.sort_key().cmp(&b.0.sort_key()));
    let responses = out.join(RESPONSES_DIR);
    for (_, completions) in &results {
        for c in completions {
            let path = responses.join(format!("{}.txt", c.fingerprint));
            fs::write(&path, &c.response_text).map_err(io_err(&path))?;
        }
    }
    let records: Vec<RunRecord> = results.into_iter().map(|(r, _)| r).collect();
    write_records(&records, out.join(RECORDS_JSONL))?;

    let summary = score_run_dir(out)?;
    let counters = cache.counters();
    let meta = RunMetaFile {
        started_at,
        finished_at: chrono::Utc::now().to_rfc3339(),
        elapsed_ms: started.elapsed().as_millis() as u64,
        planned_trials: total,
        records: records.len(),
        failures: failures.len(),
        cache: counters,
        cache_path,
        harness_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let meta_path = out.join(RUN_META_JSON);
    fs::write(&meta_path, serde_json::to_string_pretty(&meta).expect("meta serializes") + "\n")
        .map_err(io_err(&meta_path))?;
    Ok(RunOutcome {
        run_dir: out.clone(),
        records: records.len(),
        failures: failures.len(),
        cache: counters,
        summary,
    })
}

/// Reads `config.lock` from a run directory.
pub fn read_lock(run_dir: impl AsRef<Path>) -> Result<(RunConfig, String), RunError> {
    let path = run_dir.as_ref().join(CONFIG_LOCK);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let cfg: RunConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?;
    Ok((cfg, text))
}

/// Re-aggregates a run directory from `records.jsonl` and rewrites
/// `summary.json` and every report file in place.
pub fn score_run_dir(run_dir: impl AsRef<Path>) -> Result<EvalSummary, RunError> {
    let dir = run_dir.as_ref();
    score_run_dir_to(dir, dir)
}

/// Like [`score_run_dir`] but writes outputs to `out_dir`.
pub fn score_run_dir_to(run_dir: impl AsRef<Path>, out_dir: impl AsRef<Path>) -> Result<EvalSummary, RunError> {
    let (run_dir, out_dir) = (run_dir.as_ref(), out_dir.as_ref());
    let (cfg, lock_text) = read_lock(run_dir)?;
    let records = read_records(run_dir.join(RECORDS_JSONL))?;
    let opts = AggregateOptions {
        dataset_name: cfg.dataset_name(),
        z: cfg.z,
        config_digest: Some(hex::encode(Sha256::digest(lock_text.as_bytes()))),
        pattern_model: cfg.pattern_model.clone(),
        correlation_mode: cfg.correlation_mode,
    };
    let summary = aggregate(&records, &opts)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    write_summary_json(&summary, out_dir.join(SUMMARY_JSON))?;
    emit_summary_tables(&summary, out_dir)?;
    emit_figure_data(&summary, out_dir, cfg.emit_svg)?;
    Ok(summary)
}
