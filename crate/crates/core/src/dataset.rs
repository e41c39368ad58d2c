//! Multiple-choice pragmatics instances: loading, validation, and seeded
//! option shuffling.
//!
//! The on-disk format is one JSON object per line:
//!
//! ```text
//! {"id":"d-001","phenomenon":"deceits","stem":"...","options":["...","..."],"gold_index":0}
//! ```
//!
//! `gold_index` is 0-based in the file and in memory. Rendered prompts and
//! reports number options from 1.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Smallest and largest option counts accepted by [`load_dataset`].
pub const MIN_OPTIONS: usize = 2;
pub const MAX_OPTIONS: usize = 6;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("failed to access dataset {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record on line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("duplicate instance id {0:?}")]
    DuplicateId(String),
    #[error("instance {id:?}: gold_index {gold_index} out of range for {option_count} options")]
    GoldIndexOutOfRange {
        id: String,
        gold_index: i64,
        option_count: usize,
    },
    #[error("instance {id:?}: unknown phenomenon {label:?}")]
    UnknownPhenomenon { id: String, label: String },
    #[error("instance {id:?}: {reason}")]
    InvalidInstance { id: String, reason: String },
}

/// The five pragmatic phenomena under evaluation, in alphabetical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phenomenon {
    Deceits,
    IndirectSpeech,
    Irony,
    Maxims,
    Metaphor,
}

impl Phenomenon {
    pub const ALL: [Phenomenon; 5] = [
        Phenomenon::Deceits,
        Phenomenon::IndirectSpeech,
        Phenomenon::Irony,
        Phenomenon::Maxims,
        Phenomenon::Metaphor,
    ];

    /// Machine label used in files.
    pub fn as_str(self) -> &'static str {
        match self {
            Phenomenon::Deceits => "deceits",
            Phenomenon::IndirectSpeech => "indirect_speech",
            Phenomenon::Irony => "irony",
            Phenomenon::Maxims => "maxims",
            Phenomenon::Metaphor => "metaphor",
        }
    }

    /// Label used in human-readable tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Phenomenon::Deceits => "Deceits",
            Phenomenon::IndirectSpeech => "Indirect Speech",
            Phenomenon::Irony => "Irony",
            Phenomenon::Maxims => "Maxims",
            Phenomenon::Metaphor => "Metaphor",
        }
    }
}

impl fmt::Display for Phenomenon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown phenomenon {0:?}")]
pub struct UnknownPhenomenon(pub String);

impl FromStr for Phenomenon {
    type Err = UnknownPhenomenon;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Phenomenon::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| UnknownPhenomenon(s.to_string()))
    }
}

/// One multiple-choice question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub phenomenon: Phenomenon,
    /// Scenario and question as a single block.
    pub stem: String,
    pub options: Vec<String>,
    pub gold_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_tag: Option<String>,
}

impl Instance {
    pub fn gold_text(&self) -> &str {
        &self.options[self.gold_index]
    }

    /// Structural checks shared by the loader and programmatic construction.
    /// Option-count bounds are enforced by the loader only.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let invalid = |reason: &str| DatasetError::InvalidInstance {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.id.trim().is_empty() {
            return Err(invalid("empty id"));
        }
        if self.stem.trim().is_empty() {
            return Err(invalid("empty stem"));
        }
        if self.options.is_empty() {
            return Err(invalid("no options"));
        }
        if self.gold_index >= self.options.len() {
            return Err(DatasetError::GoldIndexOutOfRange {
                id: self.id.clone(),
                gold_index: self.gold_index as i64,
                option_count: self.options.len(),
            });
        }
        let mut seen = HashSet::new();
        for opt in &self.options {
            let t = opt.trim();
            if t.is_empty() {
                return Err(invalid("empty option text"));
            }
            if !seen.insert(t) {
                return Err(invalid(&format!("duplicate option {t:?}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub instances: Vec<Instance>,
}

impl Dataset {
    /// Builds a dataset from already constructed instances, enforcing
    /// per-instance invariants and id uniqueness.
    pub fn new(name: impl Into<String>, instances: Vec<Instance>) -> Result<Self, DatasetError> {
        let mut ids = HashSet::new();
        for inst in &instances {
            inst.validate()?;
            if !ids.insert(inst.id.as_str()) {
                return Err(DatasetError::DuplicateId(inst.id.clone()));
            }
        }
        Ok(Dataset {
            name: name.into(),
            instances,
        })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Instance> {
        self.instances.iter().find(|i| i.id == id)
    }
}

#[derive(Deserialize)]
struct RawRecord {
    id: String,
    phenomenon: String,
    stem: String,
    options: Vec<String>,
    gold_index: i64,
    #[serde(default)]
    source_tag: Option<String>,
}

#[derive(Serialize)]
struct RecordOut<'a> {
    id: &'a str,
    phenomenon: Phenomenon,
    stem: &'a str,
    options: &'a [String],
    gold_index: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    source_tag: Option<&'a str>,
}

/// Reads a line-delimited instance file. Blank lines are skipped; instance
/// order follows the file. The dataset name is the file stem.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_dataset(&name, &text)
}

/// Parses instance records from an in-memory string (same format as
/// [`load_dataset`]).
pub fn parse_dataset(name: &str, text: &str) -> Result<Dataset, DatasetError> {
    let mut instances = Vec::new();
    let mut ids = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord =
            serde_json::from_str(line).map_err(|e| DatasetError::MalformedRecord {
                line: line_no,
                message: e.to_string(),
            })?;
        let inst = instance_from_raw(raw, line_no)?;
        if !ids.insert(inst.id.clone()) {
            return Err(DatasetError::DuplicateId(inst.id));
        }
        instances.push(inst);
    }
    Ok(Dataset {
        name: name.to_string(),
        instances,
    })
}

fn instance_from_raw(raw: RawRecord, line: usize) -> Result<Instance, DatasetError> {
    let id = raw.id.trim().to_string();
    if id.is_empty() {
        return Err(DatasetError::MalformedRecord {
            line,
            message: "empty id".into(),
        });
    }
    let phenomenon = raw
        .phenomenon
        .trim()
        .parse::<Phenomenon>()
        .map_err(|_| DatasetError::UnknownPhenomenon {
            id: id.clone(),
            label: raw.phenomenon.clone(),
        })?;
    let option_count = raw.options.len();
    if !(MIN_OPTIONS..=MAX_OPTIONS).contains(&option_count) {
        return Err(DatasetError::InvalidInstance {
            id,
            reason: format!("expected {MIN_OPTIONS}-{MAX_OPTIONS} options, found {option_count}"),
        });
    }
    if raw.gold_index < 0 || raw.gold_index as usize >= option_count {
        return Err(DatasetError::GoldIndexOutOfRange {
            id,
            gold_index: raw.gold_index,
            option_count,
        });
    }
    let inst = Instance {
        id,
        phenomenon,
        stem: raw.stem.trim().to_string(),
        options: raw.options.iter().map(|o| o.trim().to_string()).collect(),
        gold_index: raw.gold_index as usize,
        source_tag: raw
            .source_tag
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty()),
    };
    inst.validate()?;
    Ok(inst)
}

/// Writes `ds` in the line-delimited format read by [`load_dataset`].
pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let io_err = |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    for inst in &ds.instances {
        let rec = RecordOut {
            id: &inst.id,
            phenomenon: inst.phenomenon,
            stem: &inst.stem,
            options: &inst.options,
            gold_index: inst.gold_index,
            source_tag: inst.source_tag.as_deref(),
        };
        let line = serde_json::to_string(&rec).expect("instance serializes");
        writeln!(w, "{line}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Instance count per phenomenon. All five phenomena are present as keys.
pub fn phenomenon_counts(ds: &Dataset) -> BTreeMap<Phenomenon, usize> {
    let mut counts: BTreeMap<Phenomenon, usize> = Phenomenon::ALL.iter().map(|&p| (p, 0)).collect();
    for inst in &ds.instances {
        *counts.entry(inst.phenomenon).or_default() += 1;
    }
    counts
}

/// Returns a copy of `inst` with its options permuted by a permutation
/// derived from `seed`. The gold option text is preserved.
pub fn shuffle_options(inst: &Instance, seed: u64) -> Instance {
    let mut order: Vec<usize> = (0..inst.options.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let options = order.iter().map(|&i| inst.options[i].clone()).collect();
    let gold_index = order
        .iter()
        .position(|&i| i == inst.gold_index)
        .expect("permutation contains gold index");
    Instance {
        options,
        gold_index,
        ..inst.clone()
    }
}

/// Stable 64-bit seed from a master seed and a list of string parts
/// (instance id, optionally model and method).
pub fn derive_seed(master_seed: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    for part in parts {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Generates a synthetic dataset with the requested number of instances per
/// phenomenon. Texts are placeholders; only the schema is realistic.
pub fn synthetic_dataset(
    name: &str,
    counts: &BTreeMap<Phenomenon, usize>,
    option_count: usize,
    seed: u64,
) -> Dataset {
    assert!((1..=MAX_OPTIONS).contains(&option_count));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut instances = Vec::new();
    for (&phenomenon, &count) in counts {
        for i in 0..count {
            let id = format!("{}-{:04}", phenomenon.as_str(), i + 1);
            // Stems carry a running number rather than the id, which names the phenomenon.
            let serial = instances.len() + 1;
            let options = (0..option_count)
                .map(|k| format!("Candidate reading {} for scenario {serial}.", k + 1))
                .collect();
            let gold_index = rand::Rng::random_range(&mut rng, 0..option_count);
            instances.push(Instance {
                stem: format!(
                    "Synthetic scenario {serial}. A speaker says something that means more than it literally says. What did the speaker want to convey?"
                ),
                id,
                phenomenon,
                options,
                gold_index,
                source_tag: Some("synthetic".into()),
            });
        }
    }
    Dataset {
        name: name.to_string(),
        instances,
    }
}

/// Per-phenomenon sizes of the full evaluation set (520 instances).
pub fn reference_counts() -> BTreeMap<Phenomenon, usize> {
    BTreeMap::from([
        (Phenomenon::Deceits, 100),
        (Phenomenon::IndirectSpeech, 100),
        (Phenomenon::Irony, 125),
        (Phenomenon::Maxims, 95),
        (Phenomenon::Metaphor, 100),
    ])
}
