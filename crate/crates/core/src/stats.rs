//! Scoring and summary statistics over scored trials.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Phenomenon;
use crate::extraction::Strategy;
use crate::prompts::MethodId;

/// Default normal quantile for 95% intervals.
pub const DEFAULT_Z: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("no records to aggregate")]
    EmptyInput,
    #[error("invalid counts k={k}, n={n}")]
    InvalidCounts { k: u64, n: u64 },
    #[error("z must be positive and finite, got {0}")]
    InvalidZ(f64),
    #[error("correctness vector is missing method {0}")]
    MissingMethod(MethodId),
    #[error("instance {0:?} does not have exactly one record per method")]
    IncompleteMethodCoverage(String),
    #[error("need at least 3 points for correlation, got {0}")]
    InsufficientPoints(usize),
    #[error("lengths are constant or non-finite; regression is undefined")]
    DegenerateInput,
}

/// One scored trial.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub instance_id: String,
    pub phenomenon: Phenomenon,
    pub method: MethodId,
    pub model_id: String,
    pub chosen_index: Option<usize>,
    pub gold_index: usize,
    pub correct: bool,
    pub input_chars: u64,
    pub output_chars: u64,
    pub unparsed: bool,
    #[serde(default)]
    pub option_count: usize,
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    /// Fingerprints of the completions this trial was scored from.
    #[serde(default)]
    pub fingerprints: Vec<String>,
}

fn default_strategy() -> Strategy {
    Strategy::None
}

impl RunRecord {
    /// Builds a record with `correct` and `unparsed` derived from the choice.
    #[allow(clippy::too_many_arguments)]
    pub fn scored(
        instance_id: impl Into<String>,
        phenomenon: Phenomenon,
        method: MethodId,
        model_id: impl Into<String>,
        chosen_index: Option<usize>,
        gold_index: usize,
        input_chars: u64,
        output_chars: u64,
    ) -> Self {
        RunRecord {
            instance_id: instance_id.into(),
            phenomenon,
            method,
            model_id: model_id.into(),
            chosen_index,
            gold_index,
            correct: chosen_index == Some(gold_index),
            input_chars,
            output_chars,
            unparsed: chosen_index.is_none(),
            option_count: 0,
            strategy: Strategy::None,
            fingerprints: Vec::new(),
        }
    }

    /// Checks the correctness and parse flags against the choice.
    pub fn is_consistent(&self) -> bool {
        self.correct == (self.chosen_index == Some(self.gold_index))
            && self.unparsed == self.chosen_index.is_none()
    }

    /// Canonical ordering: instance id, method order, model id.
    pub fn sort_key(&self) -> (&str, MethodId, &str) {
        (&self.instance_id, self.method, &self.model_id)
    }
}

/// Fraction of correct records.
pub fn accuracy(records: &[RunRecord]) -> Result<f64, StatsError> {
    if records.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    let k = records.iter().filter(|r| r.correct).count();
    Ok(k as f64 / records.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilsonInterval {
    pub point: f64,
    pub low: f64,
    pub high: f64,
    pub z: f64,
    pub k: u64,
    pub n: u64,
}

impl WilsonInterval {
    pub fn width(&self) -> f64 {
        self.high - self.low
    }

    pub fn contains(&self, p: f64) -> bool {
        self.low <= p && p <= self.high
    }
}

/// Wilson score interval for `k` successes out of `n`, clamped to [0, 1].
pub fn wilson_interval(k: u64, n: u64, z: f64) -> Result<WilsonInterval, StatsError> {
    if n == 0 || k > n {
        return Err(StatsError::InvalidCounts { k, n });
    }
    if !(z.is_finite() && z > 0.0) {
        return Err(StatsError::InvalidZ(z));
    }
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = (z / denom) * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    // Boundary counts are pinned so the interval always contains k/n.
    let low = if k == 0 { 0.0 } else { (center - half).clamp(0.0, p) };
    let high = if k == n { 1.0 } else { (center + half).clamp(p, 1.0) };
    Ok(WilsonInterval {
        point: p,
        low,
        high,
        z,
        k,
        n,
    })
}

/// Interval per (phenomenon, method) over `records`.
pub fn per_phenomenon_accuracy(
    records: &[RunRecord],
    z: f64,
) -> Result<BTreeMap<(Phenomenon, MethodId), WilsonInterval>, StatsError> {
    let mut counts: BTreeMap<(Phenomenon, MethodId), (u64, u64)> = BTreeMap::new();
    for r in records {
        let c = counts.entry((r.phenomenon, r.method)).or_default();
        c.0 += r.correct as u64;
        c.1 += 1;
    }
    counts
        .into_iter()
        .map(|(key, (k, n))| Ok((key, wilson_interval(k, n, z)?)))
        .collect()
}

/// Per-instance outcome classes over the six-method correctness vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ErrorPattern {
    /// simple and cot wrong, every other method right.
    #[serde(rename = "P1_proposed_effective")]
    P1ProposedEffective,
    /// Only grice and relevance right.
    #[serde(rename = "P2_short_insufficient")]
    P2ShortInsufficient,
    /// Every method wrong.
    #[serde(rename = "P3_all_failed")]
    P3AllFailed,
    /// Only grice and grice_short right.
    #[serde(rename = "P4_grice_only")]
    P4GriceOnly,
    /// Only relevance and relevance_short right.
    #[serde(rename = "P5_relevance_only")]
    P5RelevanceOnly,
    AllCorrect,
    Other,
}

impl ErrorPattern {
    pub const ALL: [ErrorPattern; 7] = [
        ErrorPattern::P1ProposedEffective,
        ErrorPattern::P2ShortInsufficient,
        ErrorPattern::P3AllFailed,
        ErrorPattern::P4GriceOnly,
        ErrorPattern::P5RelevanceOnly,
        ErrorPattern::AllCorrect,
        ErrorPattern::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorPattern::P1ProposedEffective => "P1_proposed_effective",
            ErrorPattern::P2ShortInsufficient => "P2_short_insufficient",
            ErrorPattern::P3AllFailed => "P3_all_failed",
            ErrorPattern::P4GriceOnly => "P4_grice_only",
            ErrorPattern::P5RelevanceOnly => "P5_relevance_only",
            ErrorPattern::AllCorrect => "AllCorrect",
            ErrorPattern::Other => "Other",
        }
    }

    /// The set of methods that are correct in this pattern's defining
    /// vector, or `None` for `Other`.
    pub fn correct_methods(self) -> Option<&'static [MethodId]> {
        use MethodId::*;
        Some(match self {
            ErrorPattern::P1ProposedEffective => &[Grice, Relevance, GriceShort, RelevanceShort],
            ErrorPattern::P2ShortInsufficient => &[Grice, Relevance],
            ErrorPattern::P3AllFailed => &[],
            ErrorPattern::P4GriceOnly => &[Grice, GriceShort],
            ErrorPattern::P5RelevanceOnly => &[Relevance, RelevanceShort],
            ErrorPattern::AllCorrect => &MethodId::ALL,
            ErrorPattern::Other => return None,
        })
    }
}

impl fmt::Display for ErrorPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ErrorPattern {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ErrorPattern::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown error pattern {s:?}"))
    }
}

/// Classifies one instance's correctness vector. `v` must hold all six
/// methods.
pub fn classify_error_pattern(v: &BTreeMap<MethodId, bool>) -> Result<ErrorPattern, StatsError> {
    let mut mask = 0u8;
    for m in MethodId::ALL {
        let correct = *v.get(&m).ok_or(StatsError::MissingMethod(m))?;
        if correct {
            mask |= 1 << m.ordinal();
        }
    }
    Ok(ErrorPattern::ALL
        .into_iter()
        .find(|p| {
            p.correct_methods()
                .is_some_and(|ms| ms.iter().fold(0u8, |acc, m| acc | 1 << m.ordinal()) == mask)
        })
        .unwrap_or(ErrorPattern::Other))
}

pub type PatternHistogram = BTreeMap<ErrorPattern, BTreeMap<Phenomenon, u64>>;

/// Classifies every instance in `records` (one model, one record per method
/// per instance) and counts instances per (pattern, phenomenon).
pub fn pattern_histogram(records: &[RunRecord]) -> Result<PatternHistogram, StatsError> {
    let mut by_instance: HashMap<&str, (Phenomenon, BTreeMap<MethodId, bool>)> = HashMap::new();
    for r in records {
        let entry = by_instance
            .entry(&r.instance_id)
            .or_insert_with(|| (r.phenomenon, BTreeMap::new()));
        if entry.1.insert(r.method, r.correct).is_some() {
            return Err(StatsError::IncompleteMethodCoverage(r.instance_id.clone()));
        }
    }
    let mut hist = PatternHistogram::new();
    let mut ids: Vec<_> = by_instance.keys().copied().collect();
    ids.sort_unstable();
    for id in ids {
        let (phenomenon, vector) = &by_instance[id];
        if vector.len() != MethodId::ALL.len() {
            return Err(StatsError::IncompleteMethodCoverage(id.to_string()));
        }
        let pattern = classify_error_pattern(vector)?;
        *hist.entry(pattern).or_default().entry(*phenomenon).or_default() += 1;
    }
    Ok(hist)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthAxis {
    InputLength,
    OutputLength,
}

impl LengthAxis {
    pub const ALL: [LengthAxis; 2] = [LengthAxis::InputLength, LengthAxis::OutputLength];

    pub fn as_str(self) -> &'static str {
        match self {
            LengthAxis::InputLength => "input_length",
            LengthAxis::OutputLength => "output_length",
        }
    }

    fn of(self, r: &RunRecord) -> u64 {
        match self {
            LengthAxis::InputLength => r.input_chars,
            LengthAxis::OutputLength => r.output_chars,
        }
    }
}

impl FromStr for LengthAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LengthAxis::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown axis {s:?}"))
    }
}

/// How correlation points are formed from records.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationMode {
    /// One point per (model, method): mean length against accuracy.
    #[default]
    GroupMeans,
    /// One point per record: length against 0/1 correctness. Not the
    /// per-configuration analysis; offered for exploration.
    PerRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub axis: LengthAxis,
    pub pearson_r: f64,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n: u64,
    /// Accuracy was constant across points; r is reported as 0.
    pub degenerate_y: bool,
}

/// (length, accuracy) points for `axis`. Group means are ordered by
/// (model, method).
pub fn correlation_points(
    records: &[RunRecord],
    axis: LengthAxis,
    mode: CorrelationMode,
) -> Vec<(f64, f64)> {
    match mode {
        CorrelationMode::PerRecord => records
            .iter()
            .map(|r| (axis.of(r) as f64, if r.correct { 1.0 } else { 0.0 }))
            .collect(),
        CorrelationMode::GroupMeans => {
            let mut groups: BTreeMap<(&str, MethodId), (u64, u64, u64)> = BTreeMap::new();
            for r in records {
                let g = groups.entry((&r.model_id, r.method)).or_default();
                g.0 += axis.of(r);
                g.1 += r.correct as u64;
                g.2 += 1;
            }
            groups
                .values()
                .map(|&(len, k, n)| (len as f64 / n as f64, k as f64 / n as f64))
                .collect()
        }
    }
}

/// Least-squares fit of accuracy on length plus Pearson's r, accumulated in
/// one pass with running co-moments.
pub fn length_accuracy_correlation(
    points: &[(f64, f64)],
    axis: LengthAxis,
) -> Result<CorrelationReport, StatsError> {
    if points.len() < 3 {
        return Err(StatsError::InsufficientPoints(points.len()));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(StatsError::DegenerateInput);
    }
    let (mut mean_x, mut mean_y) = (0.0f64, 0.0f64);
    let (mut m2x, mut m2y, mut cxy) = (0.0f64, 0.0f64, 0.0f64);
    for (i, &(x, y)) in points.iter().enumerate() {
        let n = (i + 1) as f64;
        let dx = x - mean_x;
        let dy = y - mean_y;
        mean_x += dx / n;
        mean_y += dy / n;
        m2x += dx * (x - mean_x);
        m2y += dy * (y - mean_y);
        cxy += dx * (y - mean_y);
    }
    let x0 = points[0].0;
    if points.iter().all(|&(x, _)| x == x0) || m2x <= 0.0 {
        return Err(StatsError::DegenerateInput);
    }
    let slope = cxy / m2x;
    let intercept = mean_y - slope * mean_x;
    let y0 = points[0].1;
    let degenerate_y = points.iter().all(|&(_, y)| y == y0);
    let pearson_r = if degenerate_y || m2y <= 0.0 {
        0.0
    } else {
        (cxy / (m2x.sqrt() * m2y.sqrt())).clamp(-1.0, 1.0)
    };
    Ok(CorrelationReport {
        axis,
        pearson_r,
        slope: if degenerate_y { 0.0 } else { slope },
        intercept: if degenerate_y { y0 } else { intercept },
        r_squared: pearson_r * pearson_r,
        n: points.len() as u64,
        degenerate_y,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, p: Phenomenon, m: MethodId, correct: bool) -> RunRecord {
        RunRecord::scored(id, p, m, "m", Some(if correct { 0 } else { 1 }), 0, 100, 10)
    }

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy(&[]), Err(StatsError::EmptyInput));
        let all: Vec<_> = (0..10)
            .map(|i| rec(&format!("i{i}"), Phenomenon::Irony, MethodId::Simple, true))
            .collect();
        assert_eq!(accuracy(&all).unwrap(), 1.0);
        let mixed: Vec<_> = (0..520)
            .map(|i| rec(&format!("i{i}"), Phenomenon::Irony, MethodId::Simple, i < 437))
            .collect();
        // Oracle: integer division 437/520 = 0.840384...
        assert!((accuracy(&mixed).unwrap() - 437.0 / 520.0).abs() < 1e-15);
        assert_eq!(format!("{:.4}", accuracy(&mixed).unwrap()), "0.8404");
    }

    #[test]
    fn wilson_boundaries() {
        let w = wilson_interval(0, 10, 1.96).unwrap();
        assert_eq!(w.low, 0.0);
        assert_eq!(w.point, 0.0);
        let w = wilson_interval(10, 10, 1.96).unwrap();
        assert_eq!(w.high, 1.0);
        assert_eq!(w.point, 1.0);
        assert!(wilson_interval(11, 10, 1.96).is_err());
        assert!(wilson_interval(0, 0, 1.96).is_err());
        assert!(wilson_interval(1, 2, 0.0).is_err());
        assert!(wilson_interval(1, 2, f64::NAN).is_err());
    }

    #[test]
    fn wilson_known_value() {
        // 437/520 at z = 1.96, evaluated with 50-digit arithmetic (mpmath).
        let w = wilson_interval(437, 520, 1.96).unwrap();
        assert!(w.low < w.point && w.point < w.high);
        assert!((w.low - 0.806_425_145_606_852_5).abs() < 1e-12, "{}", w.low);
        assert!((w.high - 0.869_351_654_097_485_6).abs() < 1e-12, "{}", w.high);
    }

    #[test]
    fn wilson_width_shrinks_with_n() {
        let mut prev = f64::INFINITY;
        for n in [4u64, 8, 16, 32, 64, 128, 256, 512] {
            let w = wilson_interval(n / 4, n, 1.96).unwrap();
            assert!(w.width() <= prev);
            prev = w.width();
        }
    }

    #[test]
    fn per_phenomenon_cells() {
        let mut rs = Vec::new();
        for (i, m) in [MethodId::Simple, MethodId::Grice].into_iter().enumerate() {
            for j in 0..5 {
                rs.push(rec(&format!("{i}-{j}"), Phenomenon::Metaphor, m, j < 3 + i));
            }
        }
        let cells = per_phenomenon_accuracy(&rs, DEFAULT_Z).unwrap();
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[&(Phenomenon::Metaphor, MethodId::Simple)].k, 3);
        assert_eq!(cells[&(Phenomenon::Metaphor, MethodId::Grice)].k, 4);
        assert_eq!(cells[&(Phenomenon::Metaphor, MethodId::Grice)].n, 5);
    }

    fn vector(correct: &[MethodId]) -> BTreeMap<MethodId, bool> {
        MethodId::ALL.iter().map(|m| (*m, correct.contains(m))).collect()
    }

    #[test]
    fn pattern_definitions() {
        use MethodId::*;
        assert_eq!(
            classify_error_pattern(&vector(&[Grice, Relevance, GriceShort, RelevanceShort])).unwrap(),
            ErrorPattern::P1ProposedEffective
        );
        assert_eq!(classify_error_pattern(&vector(&MethodId::ALL)).unwrap(), ErrorPattern::AllCorrect);
        assert_eq!(classify_error_pattern(&vector(&[])).unwrap(), ErrorPattern::P3AllFailed);
        assert_eq!(
            classify_error_pattern(&vector(&[Grice, Relevance])).unwrap(),
            ErrorPattern::P2ShortInsufficient
        );
        assert_eq!(
            classify_error_pattern(&vector(&[Grice, GriceShort])).unwrap(),
            ErrorPattern::P4GriceOnly
        );
        assert_eq!(
            classify_error_pattern(&vector(&[Relevance, RelevanceShort])).unwrap(),
            ErrorPattern::P5RelevanceOnly
        );
        assert_eq!(classify_error_pattern(&vector(&[Grice])).unwrap(), ErrorPattern::Other);
        let mut missing = vector(&[]);
        missing.remove(&Cot);
        assert_eq!(classify_error_pattern(&missing), Err(StatsError::MissingMethod(Cot)));
    }

    #[test]
    fn exhaustive_pattern_counts() {
        let mut counts: BTreeMap<ErrorPattern, usize> = BTreeMap::new();
        for mask in 0u8..64 {
            let v = MethodId::ALL
                .iter()
                .map(|m| (*m, mask & (1 << m.ordinal()) != 0))
                .collect();
            *counts.entry(classify_error_pattern(&v).unwrap()).or_default() += 1;
        }
        for p in ErrorPattern::ALL {
            let want = if p == ErrorPattern::Other { 58 } else { 1 };
            assert_eq!(counts[&p], want, "{p}");
        }
    }

    #[test]
    fn histogram_requires_full_coverage() {
        let rs = vec![rec("a", Phenomenon::Irony, MethodId::Simple, true)];
        assert_eq!(
            pattern_histogram(&rs),
            Err(StatsError::IncompleteMethodCoverage("a".into()))
        );
        let dup = vec![
            rec("a", Phenomenon::Irony, MethodId::Simple, true),
            rec("a", Phenomenon::Irony, MethodId::Simple, false),
        ];
        assert!(pattern_histogram(&dup).is_err());
        assert!(pattern_histogram(&[]).unwrap().is_empty());
    }

    #[test]
    fn histogram_all_correct_mass() {
        let mut rs = Vec::new();
        for i in 0..7 {
            for m in MethodId::ALL {
                rs.push(rec(&format!("i{i}"), Phenomenon::ALL[i % 5], m, true));
            }
        }
        let h = pattern_histogram(&rs).unwrap();
        assert_eq!(h.len(), 1);
        assert_eq!(h[&ErrorPattern::AllCorrect].values().sum::<u64>(), 7);
    }

    #[test]
    fn correlation_perfect_line() {
        let pts: Vec<_> = (0..10).map(|i| (i as f64, 0.5 * i as f64 + 0.1)).collect();
        let c = length_accuracy_correlation(&pts, LengthAxis::InputLength).unwrap();
        assert!((c.pearson_r - 1.0).abs() < 1e-12);
        assert!((c.r_squared - 1.0).abs() < 1e-12);
        assert!((c.slope - 0.5).abs() < 1e-12);
        assert!((c.intercept - 0.1).abs() < 1e-12);
    }

    #[test]
    fn correlation_degenerate_cases() {
        let flat_y = [(1.0, 0.7), (2.0, 0.7), (5.0, 0.7)];
        let c = length_accuracy_correlation(&flat_y, LengthAxis::OutputLength).unwrap();
        assert_eq!((c.pearson_r, c.r_squared), (0.0, 0.0));
        assert!(c.degenerate_y);
        let flat_x = [(3.0, 0.1), (3.0, 0.5), (3.0, 0.9)];
        assert_eq!(
            length_accuracy_correlation(&flat_x, LengthAxis::InputLength),
            Err(StatsError::DegenerateInput)
        );
        assert_eq!(
            length_accuracy_correlation(&flat_x[..2], LengthAxis::InputLength),
            Err(StatsError::InsufficientPoints(2))
        );
    }

    #[test]
    fn group_mean_points() {
        let mut rs = vec![
            RunRecord::scored("a", Phenomenon::Irony, MethodId::Simple, "m1", Some(0), 0, 100, 10),
            RunRecord::scored("b", Phenomenon::Irony, MethodId::Simple, "m1", Some(1), 0, 200, 30),
        ];
        rs.push(RunRecord::scored("a", Phenomenon::Irony, MethodId::Cot, "m1", Some(0), 0, 300, 50));
        let pts = correlation_points(&rs, LengthAxis::InputLength, CorrelationMode::GroupMeans);
        assert_eq!(pts, vec![(150.0, 0.5), (300.0, 1.0)]);
        let pts = correlation_points(&rs, LengthAxis::OutputLength, CorrelationMode::PerRecord);
        assert_eq!(pts, vec![(10.0, 1.0), (30.0, 0.0), (50.0, 1.0)]);
    }

    #[test]
    fn scored_record_flags() {
        let r = RunRecord::scored("a", Phenomenon::Irony, MethodId::Cot, "m", None, 2, 1, 1);
        assert!(r.unparsed && !r.correct && r.is_consistent());
        let r = RunRecord::scored("a", Phenomenon::Irony, MethodId::Cot, "m", Some(2), 2, 1, 1);
        assert!(!r.unparsed && r.correct && r.is_consistent());
    }
}
