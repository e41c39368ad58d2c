//! Prompting methods and prompt rendering.
//!
//! Each method owns one instruction block. The rendered user message is
//!
//! ```text
//! <stem>
//!
//! 1) <option 1>
//! 2) <option 2>
//! ...
//!
//! <instruction>
//! ```
//!
//! Template files are plain UTF-8 text. Lines beginning with `%%` are
//! annotations and are dropped when the template is loaded; a single trailing
//! newline is also dropped.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Instance;

/// Literal marker every template asks the model to emit before its choice.
pub const ANSWER_MARKER: &str = "[Answer]";

const ANNOTATION_PREFIX: &str = "%%";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template for {method} is empty")]
    EmptyTemplate { method: MethodId },
    #[error("template for {method} does not contain the answer marker {ANSWER_MARKER}")]
    MissingMarker { method: MethodId },
    #[error("failed to read template {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// The six prompting conditions, in reporting order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodId {
    Simple,
    Cot,
    Grice,
    Relevance,
    GriceShort,
    RelevanceShort,
}

impl MethodId {
    pub const ALL: [MethodId; 6] = [
        MethodId::Simple,
        MethodId::Cot,
        MethodId::Grice,
        MethodId::Relevance,
        MethodId::GriceShort,
        MethodId::RelevanceShort,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodId::Simple => "simple",
            MethodId::Cot => "cot",
            MethodId::Grice => "grice",
            MethodId::Relevance => "relevance",
            MethodId::GriceShort => "grice_short",
            MethodId::RelevanceShort => "relevance_short",
        }
    }

    /// Position in [`MethodId::ALL`].
    pub fn ordinal(self) -> usize {
        self as usize
    }

    /// Only `simple` asks for the bare answer without reasoning.
    pub fn expects_reasoning(self) -> bool {
        self != MethodId::Simple
    }

    fn builtin_source(self) -> &'static str {
        match self {
            MethodId::Simple => include_str!("../templates/simple.txt"),
            MethodId::Cot => include_str!("../templates/cot.txt"),
            MethodId::Grice => include_str!("../templates/grice.txt"),
            MethodId::Relevance => include_str!("../templates/relevance.txt"),
            MethodId::GriceShort => include_str!("../templates/grice_short.txt"),
            MethodId::RelevanceShort => include_str!("../templates/relevance_short.txt"),
        }
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown method {0:?} (expected one of simple, cot, grice, relevance, grice_short, relevance_short)")]
pub struct UnknownMethod(pub String);

impl FromStr for MethodId {
    type Err = UnknownMethod;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MethodId::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| UnknownMethod(s.to_string()))
    }
}

/// Parses a comma-separated method list such as `grice,simple`.
pub fn parse_method_list(s: &str) -> Result<Vec<MethodId>, UnknownMethod> {
    let mut out: Vec<MethodId> = s
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(str::parse)
        .collect::<Result<_, _>>()?;
    out.sort();
    out.dedup();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub method: MethodId,
    pub instruction_text: String,
    pub answer_marker: String,
    pub expects_reasoning: bool,
}

impl PromptTemplate {
    pub fn new(method: MethodId, instruction_text: impl Into<String>) -> Result<Self, PromptError> {
        let instruction_text = instruction_text.into();
        if instruction_text.trim().is_empty() {
            return Err(PromptError::EmptyTemplate { method });
        }
        if !instruction_text.contains(ANSWER_MARKER) {
            return Err(PromptError::MissingMarker { method });
        }
        Ok(PromptTemplate {
            method,
            instruction_text,
            answer_marker: ANSWER_MARKER.to_string(),
            expects_reasoning: method.expects_reasoning(),
        })
    }

    /// Builds a template from template-file source text.
    pub fn from_source(method: MethodId, source: &str) -> Result<Self, PromptError> {
        Self::new(method, strip_annotations(source))
    }

    pub fn load(method: MethodId, path: impl AsRef<Path>) -> Result<Self, PromptError> {
        let path = path.as_ref();
        let source = fs::read_to_string(path).map_err(|source| PromptError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_source(method, &source)
    }
}

fn strip_annotations(source: &str) -> String {
    let kept: Vec<&str> = source
        .lines()
        .filter(|l| !l.starts_with(ANNOTATION_PREFIX))
        .collect();
    kept.join("\n")
}

/// The six bundled templates.
pub fn builtin_templates() -> BTreeMap<MethodId, PromptTemplate> {
    MethodId::ALL
        .into_iter()
        .map(|m| {
            let t = PromptTemplate::from_source(m, m.builtin_source())
                .expect("bundled templates are valid");
            (m, t)
        })
        .collect()
}

/// Bundled templates with per-method file overrides applied.
pub fn load_templates(
    overrides: &BTreeMap<MethodId, PathBuf>,
) -> Result<BTreeMap<MethodId, PromptTemplate>, PromptError> {
    let mut templates = builtin_templates();
    for (&method, path) in overrides {
        templates.insert(method, PromptTemplate::load(method, path)?);
    }
    Ok(templates)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub instance_id: String,
    pub method: MethodId,
    pub text: String,
    pub char_len: usize,
    pub option_count: usize,
}

/// Renders the single user message for `inst` under `tmpl`. The phenomenon
/// label is never included.
pub fn render_prompt(inst: &Instance, tmpl: &PromptTemplate) -> RenderedPrompt {
    let mut text = String::with_capacity(
        inst.stem.len() + tmpl.instruction_text.len() + inst.options.iter().map(|o| o.len() + 4).sum::<usize>() + 4,
    );
    text.push_str(&inst.stem);
    text.push_str("\n\n");
    for (k, opt) in inst.options.iter().enumerate() {
        if k > 0 {
            text.push('\n');
        }
        text.push_str(&format!("{}) {}", k + 1, opt));
    }
    text.push_str("\n\n");
    text.push_str(&tmpl.instruction_text);
    RenderedPrompt {
        instance_id: inst.id.clone(),
        method: tmpl.method,
        char_len: text.chars().count(),
        option_count: inst.options.len(),
        text,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Phenomenon;

    fn latte() -> Instance {
        Instance {
            id: "maxims-latte".into(),
            phenomenon: Phenomenon::Maxims,
            stem: "Leslie and Jane are chatting at a coffee shop. Leslie asks, \"Who was that man that I saw you with last night?\" Jane responds, \"The latte is unbelievable here.\" Why has Jane responded like this?".into(),
            options: vec![
                "She does not want to discuss the topic that Leslie has raised.".into(),
                "She thinks that it is the best latte in the town.".into(),
                "The man who Leslie saw makes unbelievable lattes.".into(),
                "A coffee break is not a good time to discuss men.".into(),
            ],
            gold_index: 0,
            source_tag: None,
        }
    }

    #[test]
    fn six_templates_with_marker() {
        let t = builtin_templates();
        assert_eq!(t.len(), 6);
        for (m, tmpl) in &t {
            assert!(tmpl.instruction_text.contains("[Answer]"), "{m}");
            assert_eq!(tmpl.answer_marker, "[Answer]");
            assert_eq!(tmpl.expects_reasoning, *m != MethodId::Simple);
            assert!(!tmpl.instruction_text.contains("%%"));
            assert!(!tmpl.instruction_text.ends_with('\n'));
        }
        assert!(t[&MethodId::Cot]
            .instruction_text
            .starts_with("Firstly, think step-by-step and write down your process of thinking."));
        assert!(!t[&MethodId::Simple].expects_reasoning);
    }

    #[test]
    fn method_ids_round_trip() {
        for m in MethodId::ALL {
            assert_eq!(m.as_str().parse::<MethodId>().unwrap(), m);
            assert_eq!(MethodId::ALL[m.ordinal()], m);
        }
        assert!("zero_shot".parse::<MethodId>().is_err());
        assert_eq!(
            parse_method_list("grice, simple,grice").unwrap(),
            vec![MethodId::Simple, MethodId::Grice]
        );
    }

    #[test]
    fn rejects_template_without_marker() {
        assert!(matches!(
            PromptTemplate::new(MethodId::Cot, "Think hard."),
            Err(PromptError::MissingMarker { .. })
        ));
        assert!(matches!(
            PromptTemplate::new(MethodId::Cot, "  "),
            Err(PromptError::EmptyTemplate { .. })
        ));
    }

    #[test]
    fn annotations_are_stripped() {
        let t = PromptTemplate::from_source(MethodId::Grice, "%% note\nA\n%% more\nB [Answer]\n").unwrap();
        assert_eq!(t.instruction_text, "A\nB [Answer]");
    }

    #[test]
    fn render_latte_simple() {
        let templates = builtin_templates();
        let simple = &templates[&MethodId::Simple];
        let p = render_prompt(&latte(), simple);
        assert!(p.text.ends_with(&simple.instruction_text));
        assert!(p
            .text
            .lines()
            .any(|l| l == "1) She does not want to discuss the topic that Leslie has raised."));
        assert_eq!(p.option_count, 4);
        assert_eq!(p.char_len, p.text.chars().count());
        assert!(!p.text.to_lowercase().contains("maxims"));
    }

    #[test]
    fn render_matches_manual_concatenation() {
        let inst = latte();
        let tmpl = PromptTemplate::new(MethodId::Cot, "Pick one. [Answer] k)").unwrap();
        let manual = format!(
            "{}\n\n1) {}\n2) {}\n3) {}\n4) {}\n\nPick one. [Answer] k)",
            inst.stem, inst.options[0], inst.options[1], inst.options[2], inst.options[3]
        );
        let a = render_prompt(&inst, &tmpl);
        let b = render_prompt(&inst, &tmpl);
        assert_eq!(a.text, manual);
        assert_eq!(a, b);
    }

    #[test]
    fn render_single_option() {
        let mut inst = latte();
        inst.options.truncate(1);
        let p = render_prompt(&inst, &builtin_templates()[&MethodId::Simple]);
        let numbered = p.text.lines().filter(|l| l.starts_with("1) ")).count();
        assert_eq!(numbered, 1);
        assert!(!p.text.lines().any(|l| l.starts_with("2) ")));
    }
}
