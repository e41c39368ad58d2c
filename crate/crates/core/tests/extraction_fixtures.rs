use std::fs;
use std::path::Path;

use pragbench_core::{extract_answer, Strategy};
use proptest::prelude::*;
use regex::Regex;

fn strategy_of(s: &str) -> Strategy {
    match s {
        "marker" => Strategy::Marker,
        "last_numbered_line" => Strategy::LastNumberedLine,
        "none" => Strategy::None,
        other => panic!("unknown strategy label {other}"),
    }
}

#[test]
fn labelled_fixtures() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/parser_cases.json");
    let cases: Vec<serde_json::Value> = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    assert!(cases.len() >= 40);
    for c in &cases {
        let text = c["text"].as_str().unwrap();
        let out = extract_answer(text, c["option_count"].as_u64().unwrap() as usize);
        let expected = c["expected"].as_u64().map(|k| k as usize - 1);
        assert_eq!(out.chosen_index, expected, "{}", c["name"]);
        assert_eq!(out.strategy, strategy_of(c["strategy"].as_str().unwrap()), "{}", c["name"]);
        assert!(text.ends_with(&out.raw_tail));
    }
}

/// Reference extractor written with regular expressions.
struct Oracle {
    marker: Regex,
    line: Regex,
}

impl Oracle {
    fn new() -> Self {
        Oracle {
            marker: Regex::new(r"(?i-u)\[answer\]").unwrap(),
            line: Regex::new(r"^\s*(\d+)[).]").unwrap(),
        }
    }

    fn extract(&self, text: &str, n: usize) -> (Option<usize>, Strategy) {
        let ok = |digits: &str| digits.parse::<usize>().ok().filter(|k| (1..=n).contains(k)).map(|k| k - 1);
        if let Some(m) = self.marker.find_iter(text).last() {
            let window: String = text[m.end()..].chars().take(10).collect();
            if let Some(pos) = window.find(|c: char| c.is_ascii_digit()) {
                let digits: String = text[m.end() + pos..].chars().take_while(char::is_ascii_digit).collect();
                if let Some(k) = ok(&digits) {
                    return (Some(k), Strategy::Marker);
                }
            }
        }
        for line in text.lines().rev() {
            if let Some(c) = self.line.captures(line) {
                if let Some(k) = ok(&c[1]) {
                    return (Some(k), Strategy::LastNumberedLine);
                }
            }
        }
        (None, Strategy::None)
    }
}

#[test]
fn sweep_against_regex_oracle() {
    let oracle = Oracle::new();
    let shapes = [
        "[Answer] {k}) text",
        "[answer]{k}",
        "Reasoning.\n[ANSWER]   {k}. text",
        "{k}) first\nsecond line",
        "noise\n  {k}. indented",
        "[Answer] option number {k}",
        "[Answer] {k}) a\n[Answer] 1) b",
        "1) a\n[Answer] {k}) b",
        "[Answer] 2) a\nthen {k}) b",
        "{k}) a\n[Answer] nothing",
        "no answer at all {k}",
    ];
    for n in 1..=6 {
        for k in 0..12 {
            for shape in shapes {
                let text = shape.replace("{k}", &k.to_string());
                let out = extract_answer(&text, n);
                assert_eq!((out.chosen_index, out.strategy), oracle.extract(&text, n), "n={n} text={text:?}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn matches_oracle_on_random_text(text in "([a-z ]{0,6}|\\[[Aa]nswer\\]|[0-9]{1,2}|[).\\n])*", n in 1usize..=6) {
        let out = extract_answer(&text, n);
        prop_assert_eq!((out.chosen_index, out.strategy), Oracle::new().extract(&text, n));
    }

    #[test]
    fn never_out_of_range(text in ".{0,200}", n in 1usize..=6) {
        let out = extract_answer(&text, n);
        prop_assert!(out.chosen_index.is_none_or(|i| i < n));
        prop_assert_eq!(out.chosen_index.is_some(), out.strategy != Strategy::None);
    }
}
