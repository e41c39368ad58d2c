use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use pragbench_core::orchestrator::{FAILURES_JSONL, RECORDS_JSONL};
use pragbench_core::report::{read_records, FIGURE_ACCURACY_CSV, FIGURE_PATTERNS_CSV, FIGURE_PATTERNS_SVG, OVERALL_CSV};
use pragbench_core::{
    run_experiment, run_experiment_with_backends, save_dataset, synthetic_dataset, AnswerKey, BackendError,
    BackendMap, CompletionBackend, CompletionRecord, CompletionRequest, Dataset, MethodId, MockBackend,
    MockProfile, MockSettings, MockStyle, ModelConfig, Phenomenon, RunConfig, RunError, ShuffleScope,
};
use tempfile::TempDir;

fn dataset(per: usize) -> Dataset {
    let counts = Phenomenon::ALL.iter().map(|&p| (p, per)).collect();
    synthetic_dataset("pipe", &counts, 4, 17)
}

fn setup(per: usize) -> (TempDir, Dataset, RunConfig) {
    let dir = TempDir::new().unwrap();
    let ds = dataset(per);
    let path = dir.path().join("pipe.jsonl");
    save_dataset(&ds, &path).unwrap();
    let settings = MockSettings {
        seed: 3,
        ..MockSettings::default()
    };
    let cfg = RunConfig::new(&path, dir.path().join("run"), vec![ModelConfig::mock("mock", settings)]);
    (dir, ds, cfg)
}

fn profile(ds: &Dataset) -> MockProfile {
    MockProfile::uniform(0.75, MockStyle::ReasoningThenAnswer, AnswerKey::from_dataset(ds))
}

fn backends(model: &str, b: Arc<dyn CompletionBackend>) -> BackendMap {
    BTreeMap::from([(model.to_string(), b)])
}

/// Passes calls through until `budget` is spent, then fails with `error`.
struct Failing {
    inner: MockBackend,
    budget: u64,
    used: AtomicU64,
    auth: bool,
}

impl CompletionBackend for Failing {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionRecord, BackendError> {
        if self.used.fetch_add(1, Ordering::SeqCst) >= self.budget {
            return Err(if self.auth {
                BackendError::Auth { status: 401 }
            } else {
                BackendError::ExhaustedRetries {
                    attempts: 6,
                    last: "HTTP 503".into(),
                }
            });
        }
        self.inner.complete(req)
    }
}

/// Records every prompt it sees.
struct Recording {
    inner: MockBackend,
    prompts: Mutex<Vec<String>>,
}

impl CompletionBackend for Recording {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionRecord, BackendError> {
        self.prompts.lock().unwrap().push(req.prompt_text.clone());
        self.inner.complete(req)
    }
}

fn read(path: impl AsRef<Path>) -> String {
    fs::read_to_string(path).unwrap()
}

#[test]
fn full_grid_produces_one_record_per_trial() {
    let (_dir, _, cfg) = setup(6);
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.records, 180);
    assert_eq!(out.failures, 0);
    assert_eq!(out.cache.misses, 180);
    let records = read_records(out.run_dir.join(RECORDS_JSONL)).unwrap();
    let keys: BTreeSet<_> = records.iter().map(|r| (r.instance_id.clone(), r.method)).collect();
    assert_eq!(keys.len(), 180);
    assert_eq!(out.summary.tables.overall.len(), 6);
    assert_eq!(out.summary.tables.by_phenomenon.len(), 30);
    let pattern_total: u64 = out.summary.tables.patterns.iter().map(|p| p.count).sum();
    assert_eq!(pattern_total, 30);
    assert_eq!(read(out.run_dir.join(FAILURES_JSONL)), "");
    assert_eq!(read(out.run_dir.join(OVERALL_CSV)).lines().count(), 7);
}

#[test]
fn method_subset_runs_only_those_methods() {
    let (_dir, _, mut cfg) = setup(2);
    cfg.methods = vec![MethodId::Simple, MethodId::Grice];
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.records, 20);
    let methods: BTreeSet<_> = read_records(out.run_dir.join(RECORDS_JSONL))
        .unwrap()
        .iter()
        .map(|r| r.method)
        .collect();
    assert_eq!(methods, BTreeSet::from([MethodId::Simple, MethodId::Grice]));
    let rows: Vec<_> = out.summary.tables.overall.iter().map(|r| r.method).collect();
    assert_eq!(rows, vec![MethodId::Simple, MethodId::Grice]);
}

#[test]
fn interrupted_run_resumes_without_repeating_calls() {
    let (dir, ds, cfg) = setup(4);
    let total = 4 * 5 * 6;

    let clean_dir = dir.path().join("clean");
    let mut clean_cfg = cfg.clone();
    clean_cfg.output_dir = clean_dir.clone();
    run_experiment_with_backends(&clean_cfg, &backends("mock", Arc::new(MockBackend::new(profile(&ds))))).unwrap();

    let failing = Arc::new(Failing {
        inner: MockBackend::new(profile(&ds)),
        budget: 50,
        used: AtomicU64::new(0),
        auth: true,
    });
    let err = run_experiment_with_backends(&cfg, &backends("mock", failing.clone())).unwrap_err();
    assert!(matches!(err, RunError::CircuitBreak { .. }), "{err}");
    assert_eq!(err.exit_code(), 4);
    assert!(!cfg.output_dir.join(RECORDS_JSONL).exists());
    assert!(!read(cfg.output_dir.join(FAILURES_JSONL)).is_empty());
    let first_calls = failing.inner.calls();
    assert_eq!(first_calls, 50);

    let resumed = Arc::new(MockBackend::new(profile(&ds)));
    let out = run_experiment_with_backends(&cfg, &backends("mock", resumed.clone())).unwrap();
    assert_eq!(first_calls + resumed.calls(), total as u64);
    assert_eq!(out.cache.hits, 50);
    assert_eq!(read(cfg.output_dir.join(RECORDS_JSONL)), read(clean_dir.join(RECORDS_JSONL)));
    assert_eq!(read(cfg.output_dir.join(FAILURES_JSONL)), "");
}

#[test]
fn transient_failures_under_threshold_are_tolerated() {
    let (_dir, ds, mut cfg) = setup(4);
    cfg.failure_threshold = 0.2;
    cfg.max_in_flight = 1;
    let b = Arc::new(Failing {
        inner: MockBackend::new(profile(&ds)),
        budget: 100,
        used: AtomicU64::new(0),
        auth: false,
    });
    let out = run_experiment_with_backends(&cfg, &backends("mock", b)).unwrap();
    assert_eq!(out.records, 100);
    assert_eq!(out.failures, 20);
    assert_eq!(read(cfg.output_dir.join(FAILURES_JSONL)).lines().count(), 20);

    let (_dir, ds, mut cfg) = setup(4);
    cfg.failure_threshold = 0.1;
    let b = Arc::new(Failing {
        inner: MockBackend::new(profile(&ds)),
        budget: 100,
        used: AtomicU64::new(0),
        auth: false,
    });
    let err = run_experiment_with_backends(&cfg, &backends("mock", b)).unwrap_err();
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn prompts_never_reveal_the_phenomenon_label() {
    let (_dir, ds, cfg) = setup(3);
    let rec = Arc::new(Recording {
        inner: MockBackend::new(profile(&ds)),
        prompts: Mutex::new(Vec::new()),
    });
    run_experiment_with_backends(&cfg, &backends("mock", rec.clone())).unwrap();
    let prompts = rec.prompts.lock().unwrap();
    assert_eq!(prompts.len(), 90);
    for p in prompts.iter() {
        for label in ["deceits", "indirect_speech", "irony", "metaphor"] {
            assert!(!p.to_lowercase().contains(label), "{label} leaked into prompt");
        }
        assert!(!p.contains("phenomenon"));
    }
}

#[test]
fn per_trial_shuffle_varies_option_order_across_methods() {
    let (_dir, ds, mut cfg) = setup(3);
    cfg.shuffle.enabled = true;
    cfg.shuffle.scope = ShuffleScope::PerTrial;
    cfg.shuffle.master_seed = 9;
    cfg.methods = vec![MethodId::Simple, MethodId::Cot];
    let rec = Arc::new(Recording {
        inner: MockBackend::new(profile(&ds)),
        prompts: Mutex::new(Vec::new()),
    });
    let out = run_experiment_with_backends(&cfg, &backends("mock", rec.clone())).unwrap();
    for r in read_records(out.run_dir.join(RECORDS_JSONL)).unwrap() {
        let inst = ds.instances.iter().find(|i| i.id == r.instance_id).unwrap();
        assert_eq!(r.option_count, inst.options.len());
        assert!(r.gold_index < r.option_count);
    }

    // The first option line of simple and cot prompts for the same stem
    // should differ for at least one instance.
    let prompts = rec.prompts.lock().unwrap();
    let mut first_lines: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for p in prompts.iter() {
        let stem = p.split("\n\n").next().unwrap().to_string();
        let first = p.lines().find(|l| l.starts_with("1) ")).unwrap().to_string();
        first_lines.entry(stem).or_default().insert(first);
    }
    assert!(first_lines.values().any(|s| s.len() > 1));
}

#[test]
fn majority_vote_over_samples() {
    let (_dir, ds, mut cfg) = setup(2);
    cfg.samples = 3;
    cfg.methods = vec![MethodId::Simple];
    let b = Arc::new(MockBackend::new(profile(&ds)));
    let out = run_experiment_with_backends(&cfg, &backends("mock", b.clone())).unwrap();
    assert_eq!(b.calls(), 30);
    let records = read_records(out.run_dir.join(RECORDS_JSONL)).unwrap();
    assert_eq!(records.len(), 10);
    for r in &records {
        assert_eq!(r.fingerprints.len(), 3);
        let distinct: BTreeSet<_> = r.fingerprints.iter().collect();
        assert_eq!(distinct.len(), 3);
        // Each fingerprint's stored response must exist.
        for fp in &r.fingerprints {
            assert!(out.run_dir.join("responses").join(format!("{fp}.txt")).exists());
        }
    }
}

#[test]
fn garbage_replies_are_requeried_then_counted_unparsed() {
    let (_dir, _, mut cfg) = setup(1);
    cfg.models[0].mock.as_mut().unwrap().style = MockStyle::Garbage;
    cfg.requery_unparsed = 2;
    cfg.methods = vec![MethodId::Simple];
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.cache.misses, 15);
    let records = read_records(out.run_dir.join(RECORDS_JSONL)).unwrap();
    assert!(records.iter().all(|r| r.unparsed && !r.correct && r.fingerprints.len() == 3));
    let row = &out.summary.tables.overall[0];
    assert_eq!(row.stats.unparsed, 5);
    assert_eq!(row.stats.interval.k, 0);
}

#[test]
fn figure_outputs_are_consistent_and_stable() {
    let (_dir, _, cfg) = setup(2);
    let out = run_experiment(&cfg).unwrap();
    let csv = read(out.run_dir.join(FIGURE_ACCURACY_CSV));
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("model,method,point,low,high"));
    let mut rows = 0;
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let (p, lo, hi): (f64, f64, f64) = (f[2].parse().unwrap(), f[3].parse().unwrap(), f[4].parse().unwrap());
        assert!(lo <= p && p <= hi && (0.0..=1.0).contains(&lo) && hi <= 1.0, "{line}");
        rows += 1;
    }
    assert_eq!(rows, 6);
    let pattern_sum: usize = read(out.run_dir.join(FIGURE_PATTERNS_CSV))
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(pattern_sum, 10);

    let svg = fs::read(out.run_dir.join(FIGURE_PATTERNS_SVG)).unwrap();
    pragbench_core::score_run_dir(&out.run_dir).unwrap();
    assert_eq!(fs::read(out.run_dir.join(FIGURE_PATTERNS_SVG)).unwrap(), svg);
}

#[test]
fn bad_dataset_and_config_map_to_distinct_exit_codes() {
    let (dir, _, mut cfg) = setup(1);
    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{\"id\": \"x\"}\n").unwrap();
    cfg.dataset = bad;
    assert_eq!(run_experiment(&cfg).unwrap_err().exit_code(), 3);

    let (_dir, _, mut cfg) = setup(1);
    cfg.max_in_flight = 0;
    assert_eq!(run_experiment(&cfg).unwrap_err().exit_code(), 2);
}
