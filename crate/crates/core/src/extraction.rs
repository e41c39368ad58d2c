//! Answer extraction from free-text model output.
//!
//! Order of attempts:
//! 1. the last `[Answer]` marker (ASCII case-insensitive) whose number starts
//!    within [`MARKER_WINDOW`] characters after it;
//! 2. the last line that starts with `k)` or `k.`;
//! 3. nothing.
//!
//! Only the option number is read. Any text after `k)` is ignored.

use serde::{Deserialize, Serialize};

use crate::prompts::ANSWER_MARKER;

/// Maximum distance, in characters, between the end of the marker and the
/// first digit of the chosen option number.
pub const MARKER_WINDOW: usize = 10;
/// Number of trailing characters kept for audit.
pub const TAIL_CHARS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Marker,
    LastNumberedLine,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionResult {
    /// 0-based option index.
    pub chosen_index: Option<usize>,
    pub strategy: Strategy,
    pub raw_tail: String,
}

impl ExtractionResult {
    pub fn is_parsed(&self) -> bool {
        self.chosen_index.is_some()
    }
}

/// Extracts the chosen option from `text` for a question with
/// `option_count` options. Never returns an index `>= option_count`.
pub fn extract_answer(text: &str, option_count: usize) -> ExtractionResult {
    let raw_tail = tail(text, TAIL_CHARS);
    let in_range = |k: u64| (1..=option_count as u64).contains(&k);

    if let Some(k) = last_marker_number(text) {
        if in_range(k) {
            return ExtractionResult {
                chosen_index: Some(k as usize - 1),
                strategy: Strategy::Marker,
                raw_tail,
            };
        }
    }

    for line in text.lines().rev() {
        if let Some(k) = leading_option_number(line) {
            if in_range(k) {
                return ExtractionResult {
                    chosen_index: Some(k as usize - 1),
                    strategy: Strategy::LastNumberedLine,
                    raw_tail,
                };
            }
        }
    }

    ExtractionResult {
        chosen_index: None,
        strategy: Strategy::None,
        raw_tail,
    }
}

/// Number following the last marker occurrence, if its first digit lies
/// within the window.
fn last_marker_number(text: &str) -> Option<u64> {
    let start = rfind_ascii_ci(text, ANSWER_MARKER)?;
    let after = &text[start + ANSWER_MARKER.len()..];
    let (offset, _) = after
        .char_indices()
        .take(MARKER_WINDOW)
        .find(|(_, c)| c.is_ascii_digit())?;
    parse_digits(&after[offset..])
}

fn rfind_ascii_ci(haystack: &str, needle: &str) -> Option<usize> {
    let h = haystack.as_bytes();
    let n = needle.as_bytes();
    if n.len() > h.len() {
        return None;
    }
    (0..=h.len() - n.len())
        .rev()
        .find(|&i| h[i..i + n.len()].eq_ignore_ascii_case(n))
}

fn parse_digits(s: &str) -> Option<u64> {
    let end = s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len());
    // Overlong runs saturate and fall out of range downstream.
    s[..end].parse::<u64>().ok().or(if end > 0 { Some(u64::MAX) } else { None })
}

/// `k` when the trimmed line starts with `k)` or `k.`.
fn leading_option_number(line: &str) -> Option<u64> {
    let line = line.trim_start();
    let end = line.find(|c: char| !c.is_ascii_digit())?;
    if end == 0 {
        return None;
    }
    match line[end..].chars().next() {
        Some(')') | Some('.') => parse_digits(&line[..end]),
        _ => None,
    }
}

fn tail(text: &str, chars: usize) -> String {
    let count = text.chars().count();
    text.chars().skip(count.saturating_sub(chars)).collect()
}
