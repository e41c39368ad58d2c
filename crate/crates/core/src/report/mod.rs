//! Aggregated summaries and their on-disk forms.
//!
//! CSV files are canonical. `summary.md` and the SVG charts are rendered
//! from the same [`EvalSummary`]. Row order is always model, then method in
//! reporting order, then phenomenon.

mod svg;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Phenomenon;
use crate::prompts::MethodId;
use crate::stats::{
    correlation_points, length_accuracy_correlation, pattern_histogram, wilson_interval,
    CorrelationMode, CorrelationReport, ErrorPattern, LengthAxis, RunRecord, StatsError,
    WilsonInterval, DEFAULT_Z,
};

pub use svg::{accuracy_chart, pattern_chart};

pub const OVERALL_CSV: &str = "overall.csv";
pub const BY_PHENOMENON_CSV: &str = "by_phenomenon.csv";
pub const PATTERNS_CSV: &str = "patterns.csv";
pub const CORRELATION_CSV: &str = "correlation.csv";
pub const SUMMARY_MD: &str = "summary.md";
pub const SUMMARY_JSON: &str = "summary.json";
pub const FIGURE_ACCURACY_CSV: &str = "figure_accuracy.csv";
pub const FIGURE_PATTERNS_CSV: &str = "figure_patterns.csv";
pub const FIGURE_ACCURACY_SVG: &str = "figure_accuracy.svg";
pub const FIGURE_PATTERNS_SVG: &str = "figure_patterns.svg";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("record for instance {0:?} has inconsistent correct/unparsed flags")]
    InconsistentRecord(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, message: impl Into<String>) -> ReportError {
    ReportError::Parse {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub interval: WilsonInterval,
    pub unparsed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverallRow {
    pub model: String,
    pub method: MethodId,
    pub stats: CellStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhenomenonRow {
    pub model: String,
    pub method: MethodId,
    pub phenomenon: Phenomenon,
    pub stats: CellStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternRow {
    pub pattern: ErrorPattern,
    pub phenomenon: Phenomenon,
    pub count: u64,
}

/// Everything that is written to the CSV tables.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SummaryTables {
    pub overall: Vec<OverallRow>,
    pub by_phenomenon: Vec<PhenomenonRow>,
    /// Non-zero (pattern, phenomenon) cells only.
    pub patterns: Vec<PatternRow>,
    pub correlation: Vec<CorrelationReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub dataset_name: String,
    pub models: Vec<String>,
    pub methods: Vec<MethodId>,
    pub instance_count: usize,
    pub record_count: usize,
    pub z: f64,
    pub config_digest: Option<String>,
    /// Model whose records feed the error-pattern histogram.
    pub pattern_model: Option<String>,
    pub correlation_mode: CorrelationMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub meta: RunMeta,
    pub tables: SummaryTables,
    /// Analyses that were skipped and why.
    pub notes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct AggregateOptions {
    pub dataset_name: String,
    pub z: f64,
    pub config_digest: Option<String>,
    /// Defaults to the alphabetically first model.
    pub pattern_model: Option<String>,
    pub correlation_mode: CorrelationMode,
}

impl Default for AggregateOptions {
    fn default() -> Self {
        AggregateOptions {
            dataset_name: String::new(),
            z: DEFAULT_Z,
            config_digest: None,
            pattern_model: None,
            correlation_mode: CorrelationMode::GroupMeans,
        }
    }
}

#[derive(Default, Clone, Copy)]
struct Tally {
    k: u64,
    n: u64,
    unparsed: u64,
}

impl Tally {
    fn add(&mut self, r: &RunRecord) {
        self.k += r.correct as u64;
        self.n += 1;
        self.unparsed += r.unparsed as u64;
    }

    fn stats(self, z: f64) -> Result<CellStats, StatsError> {
        Ok(CellStats {
            interval: wilson_interval(self.k, self.n, z)?,
            unparsed: self.unparsed,
        })
    }
}

/// Builds the summary from scored records. The result does not depend on
/// record order.
pub fn aggregate(records: &[RunRecord], opts: &AggregateOptions) -> Result<EvalSummary, ReportError> {
    if let Some(bad) = records.iter().find(|r| !r.is_consistent()) {
        return Err(ReportError::InconsistentRecord(bad.instance_id.clone()));
    }
    let z = opts.z;
    let mut overall: BTreeMap<(&str, MethodId), Tally> = BTreeMap::new();
    let mut by_phen: BTreeMap<(&str, MethodId, Phenomenon), Tally> = BTreeMap::new();
    let mut instances = BTreeSet::new();
    for r in records {
        overall.entry((&r.model_id, r.method)).or_default().add(r);
        by_phen.entry((&r.model_id, r.method, r.phenomenon)).or_default().add(r);
        instances.insert(r.instance_id.as_str());
    }
    let models: Vec<String> = overall.keys().map(|(m, _)| m.to_string()).collect::<BTreeSet<_>>().into_iter().collect();
    let methods: Vec<MethodId> = overall.keys().map(|(_, m)| *m).collect::<BTreeSet<_>>().into_iter().collect();

    let mut tables = SummaryTables::default();
    for (&(model, method), t) in &overall {
        tables.overall.push(OverallRow {
            model: model.to_string(),
            method,
            stats: t.stats(z)?,
        });
    }
    for (&(model, method, phenomenon), t) in &by_phen {
        tables.by_phenomenon.push(PhenomenonRow {
            model: model.to_string(),
            method,
            phenomenon,
            stats: t.stats(z)?,
        });
    }

    let mut notes = Vec::new();
    let pattern_model = opts.pattern_model.clone().or_else(|| models.first().cloned());
    if let Some(pm) = &pattern_model {
        let subset: Vec<RunRecord> = records.iter().filter(|r| &r.model_id == pm).cloned().collect();
        if subset.is_empty() {
            notes.push(format!("error patterns skipped: no records for model {pm}"));
        } else {
            match pattern_histogram(&subset) {
                Ok(hist) => {
                    for (pattern, cells) in hist {
                        for (phenomenon, count) in cells {
                            tables.patterns.push(PatternRow {
                                pattern,
                                phenomenon,
                                count,
                            });
                        }
                    }
                }
                Err(e) => notes.push(format!("error patterns skipped for {pm}: {e}")),
            }
        }
    }

    for axis in LengthAxis::ALL {
        let pts = correlation_points(records, axis, opts.correlation_mode);
        match length_accuracy_correlation(&pts, axis) {
            Ok(rep) => tables.correlation.push(rep),
            Err(e) => notes.push(format!("{} correlation skipped: {e}", axis.as_str())),
        }
    }

    Ok(EvalSummary {
        meta: RunMeta {
            dataset_name: opts.dataset_name.clone(),
            models,
            methods,
            instance_count: instances.len(),
            record_count: records.len(),
            z,
            config_digest: opts.config_digest.clone(),
            pattern_model,
            correlation_mode: opts.correlation_mode,
        },
        tables,
        notes,
    })
}

fn cmp_rate(a: &WilsonInterval, b: &WilsonInterval) -> Ordering {
    (a.k as u128 * b.n as u128).cmp(&(b.k as u128 * a.n as u128))
}

/// Flags, per row group, the cells that reach the group's highest accuracy.
fn best_flags<T>(rows: &[T], group: impl Fn(&T) -> String, interval: impl Fn(&T) -> &WilsonInterval) -> Vec<bool> {
    let mut best: BTreeMap<String, &WilsonInterval> = BTreeMap::new();
    for r in rows {
        let w = interval(r);
        best.entry(group(r))
            .and_modify(|b| {
                if cmp_rate(w, b) == Ordering::Greater {
                    *b = w;
                }
            })
            .or_insert(w);
    }
    rows.iter()
        .map(|r| cmp_rate(interval(r), best[&group(r)]) == Ordering::Equal)
        .collect()
}

pub fn overall_best_flags(rows: &[OverallRow]) -> Vec<bool> {
    best_flags(rows, |r| r.model.clone(), |r| &r.stats.interval)
}

pub fn phenomenon_best_flags(rows: &[PhenomenonRow]) -> Vec<bool> {
    best_flags(rows, |r| format!("{}\u{0}{}", r.model, r.phenomenon), |r| &r.stats.interval)
}

fn prob(x: f64) -> String {
    format!("{x:.4}")
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, ReportError> {
    let f = File::create(path).map_err(io_err(path))?;
    Ok(csv::Writer::from_writer(BufWriter::new(f)))
}

fn csv_fail(path: &Path) -> impl FnOnce(csv::Error) -> ReportError + '_ {
    move |e| parse_err(path, e.to_string())
}

fn write_rows(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<(), ReportError> {
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(csv_fail(path))?;
    for row in rows {
        w.write_record(&row).map_err(csv_fail(path))?;
    }
    w.flush().map_err(io_err(path))
}

const OVERALL_HEADER: [&str; 9] = ["model", "method", "k", "n", "accuracy", "ci_low", "ci_high", "unparsed", "best_in_row"];
const BY_PHENOMENON_HEADER: [&str; 10] = [
    "model", "method", "phenomenon", "k", "n", "accuracy", "ci_low", "ci_high", "unparsed", "best_in_row",
];
const PATTERNS_HEADER: [&str; 3] = ["pattern", "phenomenon", "count"];
const CORRELATION_HEADER: [&str; 6] = ["axis", "pearson_r", "slope", "intercept", "r_squared", "n"];

fn cell_columns(s: &CellStats) -> [String; 6] {
    let w = &s.interval;
    [
        w.k.to_string(),
        w.n.to_string(),
        prob(w.point),
        prob(w.low),
        prob(w.high),
        s.unparsed.to_string(),
    ]
}

/// Writes the four CSV tables and `summary.md` into `dir`.
pub fn emit_summary_tables(s: &EvalSummary, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, ReportError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let t = &s.tables;
    let mut written = Vec::new();

    let path = dir.join(OVERALL_CSV);
    let flags = overall_best_flags(&t.overall);
    let rows = t
        .overall
        .iter()
        .zip(flags)
        .map(|(r, best)| {
            let mut row = vec![r.model.clone(), r.method.to_string()];
            row.extend(cell_columns(&r.stats));
            row.push(best.to_string());
            row
        })
        .collect();
    write_rows(&path, &OVERALL_HEADER, rows)?;
    written.push(path);

    let path = dir.join(BY_PHENOMENON_CSV);
    let flags = phenomenon_best_flags(&t.by_phenomenon);
    let rows = t
        .by_phenomenon
        .iter()
        .zip(flags)
        .map(|(r, best)| {
            let mut row = vec![r.model.clone(), r.method.to_string(), r.phenomenon.to_string()];
            row.extend(cell_columns(&r.stats));
            row.push(best.to_string());
            row
        })
        .collect();
    write_rows(&path, &BY_PHENOMENON_HEADER, rows)?;
    written.push(path);

    let path = dir.join(PATTERNS_CSV);
    let rows = t
        .patterns
        .iter()
        .map(|r| vec![r.pattern.to_string(), r.phenomenon.to_string(), r.count.to_string()])
        .collect();
    write_rows(&path, &PATTERNS_HEADER, rows)?;
    written.push(path);

    let path = dir.join(CORRELATION_CSV);
    let rows = t
        .correlation
        .iter()
        .map(|c| {
            vec![
                c.axis.as_str().to_string(),
                c.pearson_r.to_string(),
                c.slope.to_string(),
                c.intercept.to_string(),
                c.r_squared.to_string(),
                c.n.to_string(),
            ]
        })
        .collect();
    write_rows(&path, &CORRELATION_HEADER, rows)?;
    written.push(path);

    let path = dir.join(SUMMARY_MD);
    fs::write(&path, render_markdown(s)).map_err(io_err(&path))?;
    written.push(path);
    Ok(written)
}

/// Writes long-format plotting data and, when `svg` is set, bar charts.
pub fn emit_figure_data(s: &EvalSummary, dir: impl AsRef<Path>, svg: bool) -> Result<Vec<PathBuf>, ReportError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();

    let path = dir.join(FIGURE_ACCURACY_CSV);
    let rows = s
        .tables
        .overall
        .iter()
        .map(|r| {
            let w = &r.stats.interval;
            vec![r.model.clone(), r.method.to_string(), prob(w.point), prob(w.low), prob(w.high)]
        })
        .collect();
    write_rows(&path, &["model", "method", "point", "low", "high"], rows)?;
    written.push(path);

    let path = dir.join(FIGURE_PATTERNS_CSV);
    let rows = s
        .tables
        .patterns
        .iter()
        .map(|r| vec![r.pattern.to_string(), r.phenomenon.to_string(), r.count.to_string()])
        .collect();
    write_rows(&path, &PATTERNS_HEADER, rows)?;
    written.push(path);

    if svg {
        let path = dir.join(FIGURE_ACCURACY_SVG);
        fs::write(&path, accuracy_chart(&s.tables.overall)).map_err(io_err(&path))?;
        written.push(path);
        let path = dir.join(FIGURE_PATTERNS_SVG);
        fs::write(&path, pattern_chart(&s.tables.patterns)).map_err(io_err(&path))?;
        written.push(path);
    }
    Ok(written)
}

pub fn write_summary_json(s: &EvalSummary, path: impl AsRef<Path>) -> Result<(), ReportError> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(s).expect("summary serializes");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_summary_json(path: impl AsRef<Path>) -> Result<EvalSummary, ReportError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, e.to_string()))
}

fn read_csv(path: &Path, header: &[&str]) -> Result<Vec<csv::StringRecord>, ReportError> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut r = csv::Reader::from_reader(BufReader::new(f));
    let got = r.headers().map_err(csv_fail(path))?.clone();
    if got.iter().collect::<Vec<_>>() != header {
        return Err(parse_err(path, format!("unexpected header {got:?}")));
    }
    r.records().map(|rec| rec.map_err(csv_fail(path))).collect()
}

fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, idx: usize) -> Result<T, ReportError>
where
    T::Err: std::fmt::Display,
{
    let raw = rec.get(idx).ok_or_else(|| parse_err(path, format!("missing column {idx}")))?;
    raw.parse::<T>()
        .map_err(|e| parse_err(path, format!("column {idx} value {raw:?}: {e}")))
}

fn cell_from(path: &Path, rec: &csv::StringRecord, first: usize, z: f64) -> Result<CellStats, ReportError> {
    let k = field::<u64>(path, rec, first)?;
    let n = field::<u64>(path, rec, first + 1)?;
    Ok(CellStats {
        interval: wilson_interval(k, n, z)?,
        unparsed: field(path, rec, first + 5)?,
    })
}

/// Reads the CSV tables in `dir` back into [`SummaryTables`]. Intervals are
/// recomputed from the stored counts at `z`.
pub fn load_summary_tables(dir: impl AsRef<Path>, z: f64) -> Result<SummaryTables, ReportError> {
    let dir = dir.as_ref();
    let mut t = SummaryTables::default();

    let path = dir.join(OVERALL_CSV);
    for rec in read_csv(&path, &OVERALL_HEADER)? {
        t.overall.push(OverallRow {
            model: field(&path, &rec, 0)?,
            method: field(&path, &rec, 1)?,
            stats: cell_from(&path, &rec, 2, z)?,
        });
    }
    let path = dir.join(BY_PHENOMENON_CSV);
    for rec in read_csv(&path, &BY_PHENOMENON_HEADER)? {
        t.by_phenomenon.push(PhenomenonRow {
            model: field(&path, &rec, 0)?,
            method: field(&path, &rec, 1)?,
            phenomenon: field(&path, &rec, 2)?,
            stats: cell_from(&path, &rec, 3, z)?,
        });
    }
    let path = dir.join(PATTERNS_CSV);
    for rec in read_csv(&path, &PATTERNS_HEADER)? {
        t.patterns.push(PatternRow {
            pattern: field(&path, &rec, 0)?,
            phenomenon: field(&path, &rec, 1)?,
            count: field(&path, &rec, 2)?,
        });
    }
    let path = dir.join(CORRELATION_CSV);
    for rec in read_csv(&path, &CORRELATION_HEADER)? {
        let pearson_r: f64 = field(&path, &rec, 1)?;
        let slope: f64 = field(&path, &rec, 2)?;
        t.correlation.push(CorrelationReport {
            axis: field(&path, &rec, 0)?,
            pearson_r,
            slope,
            intercept: field(&path, &rec, 3)?,
            r_squared: field(&path, &rec, 4)?,
            n: field(&path, &rec, 5)?,
            // Constant accuracy is the only case reported with r = slope = 0.
            degenerate_y: pearson_r == 0.0 && slope == 0.0,
        });
    }
    Ok(t)
}

pub fn write_records(records: &[RunRecord], path: impl AsRef<Path>) -> Result<(), ReportError> {
    let path = path.as_ref();
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    for r in records {
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<RunRecord>, ReportError> {
    let path = path.as_ref();
    let f = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RunRecord = serde_json::from_str(&line)
            .map_err(|e| parse_err(path, format!("line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

fn fmt_cell(w: &WilsonInterval, bold: bool) -> String {
    let body = format!("{:.3} [{:.3}, {:.3}]", w.point, w.low, w.high);
    if bold {
        format!("**{body}**")
    } else {
        body
    }
}

/// Human-readable report. Best method per model is bold.
pub fn render_markdown(s: &EvalSummary) -> String {
    let m = &s.meta;
    let t = &s.tables;
    let mut out = String::new();
    let _ = writeln!(out, "# Evaluation summary: {}\n", if m.dataset_name.is_empty() { "(unnamed)" } else { &m.dataset_name });
    let _ = writeln!(
        out,
        "Models: {}. Instances: {}. Records: {}. Intervals: Wilson, z = {}.\n",
        if m.models.is_empty() { "none".to_string() } else { m.models.join(", ") },
        m.instance_count,
        m.record_count,
        m.z
    );

    let _ = writeln!(out, "## Overall accuracy\n");
    let methods = &m.methods;
    let _ = writeln!(out, "| Model | {} |", methods.iter().map(|x| x.as_str()).collect::<Vec<_>>().join(" | "));
    let _ = writeln!(out, "|---|{}", "---|".repeat(methods.len()));
    let flags = overall_best_flags(&t.overall);
    for model in &m.models {
        let cells: Vec<String> = methods
            .iter()
            .map(|method| {
                t.overall
                    .iter()
                    .zip(&flags)
                    .find(|(r, _)| &r.model == model && r.method == *method)
                    .map(|(r, &best)| fmt_cell(&r.stats.interval, best))
                    .unwrap_or_else(|| "n/a".into())
            })
            .collect();
        let _ = writeln!(out, "| {model} | {} |", cells.join(" | "));
    }

    let _ = writeln!(out, "\n## Unparsed outputs\n");
    let _ = writeln!(out, "| Model | Method | Unparsed | Trials |\n|---|---|---|---|");
    for r in &t.overall {
        let _ = writeln!(out, "| {} | {} | {} | {} |", r.model, r.method, r.stats.unparsed, r.stats.interval.n);
    }

    let _ = writeln!(out, "\n## Accuracy by phenomenon");
    let flags = phenomenon_best_flags(&t.by_phenomenon);
    for model in &m.models {
        let _ = writeln!(out, "\n### {model}\n");
        let _ = writeln!(
            out,
            "| Method | {} |",
            Phenomenon::ALL.iter().map(|p| p.display_name()).collect::<Vec<_>>().join(" | ")
        );
        let _ = writeln!(out, "|---|{}", "---|".repeat(Phenomenon::ALL.len()));
        for method in methods {
            let cells: Vec<String> = Phenomenon::ALL
                .iter()
                .map(|p| {
                    t.by_phenomenon
                        .iter()
                        .zip(&flags)
                        .find(|(r, _)| &r.model == model && r.method == *method && r.phenomenon == *p)
                        .map(|(r, &best)| {
                            let v = format!("{:.2}", r.stats.interval.point);
                            if best { format!("**{v}**") } else { v }
                        })
                        .unwrap_or_else(|| "n/a".into())
                })
                .collect();
            let _ = writeln!(out, "| {method} | {} |", cells.join(" | "));
        }
    }

    let _ = writeln!(
        out,
        "\n## Error patterns{}\n",
        m.pattern_model.as_deref().map(|pm| format!(" ({pm})")).unwrap_or_default()
    );
    let _ = writeln!(
        out,
        "| Pattern | {} | Total |",
        Phenomenon::ALL.iter().map(|p| p.display_name()).collect::<Vec<_>>().join(" | ")
    );
    let _ = writeln!(out, "|---|{}---|", "---|".repeat(Phenomenon::ALL.len()));
    for pattern in ErrorPattern::ALL {
        let counts: Vec<u64> = Phenomenon::ALL
            .iter()
            .map(|p| {
                t.patterns
                    .iter()
                    .find(|r| r.pattern == pattern && r.phenomenon == *p)
                    .map_or(0, |r| r.count)
            })
            .collect();
        let total: u64 = counts.iter().sum();
        let _ = writeln!(
            out,
            "| {pattern} | {} | {total} |",
            counts.iter().map(u64::to_string).collect::<Vec<_>>().join(" | ")
        );
    }

    let _ = writeln!(out, "\n## Length and accuracy\n");
    let _ = writeln!(out, "| Axis | Pearson r | R² | Slope | Intercept | Points |\n|---|---|---|---|---|---|");
    for c in &t.correlation {
        let _ = writeln!(
            out,
            "| {}{} | {:.3} | {:.3} | {:.3e} | {:.3} | {} |",
            c.axis.as_str(),
            if c.degenerate_y { " (constant accuracy)" } else { "" },
            c.pearson_r,
            c.r_squared,
            c.slope,
            c.intercept,
            c.n
        );
    }

    if !s.notes.is_empty() {
        let _ = writeln!(out, "\n## Notes\n");
        for n in &s.notes {
            let _ = writeln!(out, "- {n}");
        }
    }
    out
}
