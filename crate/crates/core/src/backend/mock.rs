use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BackendError, CompletionBackend, CompletionRecord, CompletionRequest};
use crate::dataset::{Dataset, Phenomenon};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockStyle {
    /// Only the marker line.
    BareAnswer,
    /// A few lines of reasoning, then the marker line.
    #[default]
    ReasoningThenAnswer,
    /// Text with no marker and no numbered lines.
    Garbage,
}

#[derive(Debug, Clone)]
struct KeyEntry {
    phenomenon: Phenomenon,
    gold_text: String,
}

/// Maps question stems back to their phenomenon and gold option so the mock
/// can answer rendered prompts without side channels.
#[derive(Debug, Clone, Default)]
pub struct AnswerKey {
    by_stem: HashMap<String, Vec<KeyEntry>>,
}

/// A question recovered from a rendered prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocatedQuestion {
    pub phenomenon: Phenomenon,
    pub options: Vec<String>,
    /// 0-based position of the gold option in the prompt's order.
    pub gold_position: usize,
}

impl AnswerKey {
    pub fn from_dataset(ds: &Dataset) -> Self {
        let mut by_stem: HashMap<String, Vec<KeyEntry>> = HashMap::new();
        for inst in &ds.instances {
            by_stem.entry(inst.stem.clone()).or_default().push(KeyEntry {
                phenomenon: inst.phenomenon,
                gold_text: inst.gold_text().to_string(),
            });
        }
        AnswerKey { by_stem }
    }

    /// Finds the question in a prompt laid out as stem, blank line,
    /// numbered options.
    pub fn locate(&self, prompt: &str) -> Option<LocatedQuestion> {
        for (split, _) in prompt.match_indices("\n\n1) ") {
            let Some(entries) = self.by_stem.get(&prompt[..split]) else {
                continue;
            };
            let options = numbered_block(&prompt[split + 2..]);
            for entry in entries {
                if let Some(gold_position) = options.iter().position(|o| *o == entry.gold_text) {
                    return Some(LocatedQuestion {
                        phenomenon: entry.phenomenon,
                        options,
                        gold_position,
                    });
                }
            }
        }
        None
    }
}

fn numbered_block(text: &str) -> Vec<String> {
    let mut options = Vec::new();
    for line in text.lines() {
        let prefix = format!("{}) ", options.len() + 1);
        match line.strip_prefix(&prefix) {
            Some(rest) => options.push(rest.to_string()),
            None => break,
        }
    }
    options
}

#[derive(Debug, Clone)]
pub struct MockProfile {
    pub accuracy: BTreeMap<Phenomenon, f64>,
    /// Used for phenomena missing from `accuracy`.
    pub default_accuracy: f64,
    pub style: MockStyle,
    pub seed: u64,
    pub answer_key: AnswerKey,
}

impl MockProfile {
    pub fn uniform(accuracy: f64, style: MockStyle, answer_key: AnswerKey) -> Self {
        MockProfile {
            accuracy: BTreeMap::new(),
            default_accuracy: accuracy,
            style,
            seed: 0,
            answer_key,
        }
    }

    pub fn accuracy_for(&self, p: Phenomenon) -> f64 {
        self.accuracy.get(&p).copied().unwrap_or(self.default_accuracy)
    }
}

/// Deterministic stand-in for a model. The draw is seeded by the request
/// fingerprint, so a given request always gets the same answer.
pub fn mock_complete(req: &CompletionRequest, profile: &MockProfile) -> CompletionRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(req.fingerprint.seed() ^ profile.seed);
    let Some(q) = profile.answer_key.locate(&req.prompt_text) else {
        return CompletionRecord::new(req, "I do not recognise this question.".to_string());
    };
    let n = q.options.len();
    let target = profile.accuracy_for(q.phenomenon).clamp(0.0, 1.0);
    let hit = rng.random::<f64>() < target;
    let choice = if hit || n == 1 {
        q.gold_position
    } else {
        let wrong = rng.random_range(0..n - 1);
        if wrong >= q.gold_position {
            wrong + 1
        } else {
            wrong
        }
    };
    let answer = format!("[Answer] {}) {}", choice + 1, q.options[choice]);
    let text = match profile.style {
        MockStyle::BareAnswer => answer,
        MockStyle::ReasoningThenAnswer => {
            let other = (choice + 1) % n;
            format!(
                "The utterance should not be read only at face value.\n\
                 Option {}) \"{}\" would follow from the literal words alone.\n\
                 Considering the context and what the speaker could reasonably intend, one reading fits best.\n\
                 {answer}",
                other + 1,
                q.options[other]
            )
        }
        MockStyle::Garbage => {
            let filler = ["hmm", "perhaps", "unclear", "maybe", "so"];
            let words: Vec<&str> = (0..rng.random_range(3..12))
                .map(|_| filler[rng.random_range(0..filler.len())])
                .collect();
            format!("I am not able to decide: {}", words.join(" "))
        }
    };
    CompletionRecord::new(req, text)
}

/// [`mock_complete`] behind the backend trait, counting calls.
pub struct MockBackend {
    profile: MockProfile,
    calls: AtomicU64,
}

impl MockBackend {
    pub fn new(profile: MockProfile) -> Self {
        MockBackend {
            profile,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl CompletionBackend for MockBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionRecord, BackendError> {
        req.params.validate()?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(mock_complete(req, &self.profile))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::GenerationParams;
    use crate::dataset::synthetic_dataset;
    use crate::extraction::{extract_answer, Strategy};
    use crate::prompts::{builtin_templates, render_prompt, MethodId};

    fn dataset(per: usize) -> Dataset {
        let counts = Phenomenon::ALL.iter().map(|&p| (p, per)).collect();
        synthetic_dataset("mock", &counts, 4, 3)
    }

    fn requests(ds: &Dataset, method: MethodId) -> Vec<(CompletionRequest, usize)> {
        let tmpl = &builtin_templates()[&method];
        ds.instances
            .iter()
            .map(|i| {
                let p = render_prompt(i, tmpl);
                (CompletionRequest::new("mock", p.text, GenerationParams::default()), i.gold_index)
            })
            .collect()
    }

    #[test]
    fn perfect_bare_answer() {
        let ds = dataset(4);
        let profile = MockProfile::uniform(1.0, MockStyle::BareAnswer, AnswerKey::from_dataset(&ds));
        for ((req, gold), inst) in requests(&ds, MethodId::Simple).iter().zip(&ds.instances) {
            let rec = mock_complete(req, &profile);
            assert_eq!(rec.response_text, format!("[Answer] {}) {}", gold + 1, inst.gold_text()));
        }
    }

    #[test]
    fn zero_accuracy_never_gold() {
        let ds = dataset(10);
        let profile = MockProfile::uniform(0.0, MockStyle::ReasoningThenAnswer, AnswerKey::from_dataset(&ds));
        for (req, gold) in requests(&ds, MethodId::Grice) {
            let rec = mock_complete(&req, &profile);
            let ex = extract_answer(&rec.response_text, 4);
            assert_eq!(ex.strategy, Strategy::Marker);
            assert_ne!(ex.chosen_index, Some(gold));
        }
    }

    #[test]
    fn deterministic_per_fingerprint() {
        let ds = dataset(2);
        let backend = MockBackend::new(MockProfile::uniform(0.5, MockStyle::ReasoningThenAnswer, AnswerKey::from_dataset(&ds)));
        let (req, _) = requests(&ds, MethodId::Cot).remove(0);
        let a = backend.complete(&req).unwrap();
        let b = backend.complete(&req).unwrap();
        assert_eq!(a.response_text, b.response_text);
        assert_eq!(backend.calls(), 2);
    }

    #[test]
    fn empirical_accuracy_tracks_target() {
        // Law of large numbers over 10,000 independent fingerprints.
        let ds = dataset(2000);
        let profile = MockProfile::uniform(0.8, MockStyle::BareAnswer, AnswerKey::from_dataset(&ds));
        let reqs = requests(&ds, MethodId::Relevance);
        assert_eq!(reqs.len(), 10_000);
        let hits = reqs
            .iter()
            .filter(|(req, gold)| extract_answer(&mock_complete(req, &profile).response_text, 4).chosen_index == Some(*gold))
            .count();
        let acc = hits as f64 / reqs.len() as f64;
        assert!((acc - 0.8).abs() <= 0.02, "{acc}");
    }

    #[test]
    fn garbage_never_parses() {
        let ds = dataset(5);
        let profile = MockProfile::uniform(1.0, MockStyle::Garbage, AnswerKey::from_dataset(&ds));
        for (req, _) in requests(&ds, MethodId::Cot) {
            let rec = mock_complete(&req, &profile);
            assert_eq!(extract_answer(&rec.response_text, 4).strategy, Strategy::None);
        }
    }

    #[test]
    fn locate_follows_shuffled_options() {
        let ds = dataset(1);
        let key = AnswerKey::from_dataset(&ds);
        let shuffled = crate::dataset::shuffle_options(&ds.instances[0], 99);
        let p = render_prompt(&shuffled, &builtin_templates()[&MethodId::GriceShort]);
        let q = key.locate(&p.text).unwrap();
        assert_eq!(q.gold_position, shuffled.gold_index);
        assert_eq!(q.options, shuffled.options);
        assert!(key.locate("unrelated prompt").is_none());
    }
}
