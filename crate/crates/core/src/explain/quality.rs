// SPDX-License-Identifier: MIT OR Apache-2.0

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{CircuitEvidence, Explanation};
use crate::model::HeadIndex;

/// Word limit of the informational conciseness flag.
pub const CONCISE_WORDS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityScore {
    pub mentions_heads: bool,
    pub uses_percentages: bool,
    pub mentions_prediction: bool,
    pub mentions_io_name: bool,
    pub mentions_s_name: bool,
    /// Mean of the five criteria above.
    pub overall: f64,
    /// Not part of `overall`.
    pub concise: bool,
}

impl QualityScore {
    pub fn criteria(&self) -> [bool; 5] {
        [
            self.mentions_heads,
            self.uses_percentages,
            self.mentions_prediction,
            self.mentions_io_name,
            self.mentions_s_name,
        ]
    }
}

fn head_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\bL\d+H\d+\b").expect("valid regex"))
}

fn number_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\d+(?:\.\d+)?").expect("valid regex"))
}

fn cites_head(text: &str, evidence: &CircuitEvidence) -> bool {
    head_pattern()
        .find_iter(text)
        .filter_map(|m| m.as_str().parse::<HeadIndex>().ok())
        .any(|h| evidence.cited_heads.contains(&h))
}

/// Standalone numbers in `text`: digits not glued to letters, so `L9H9` yields nothing.
fn standalone_numbers(text: &str) -> Vec<f64> {
    number_pattern()
        .find_iter(text)
        .filter(|m| {
            let before = text[..m.start()].chars().next_back();
            let after = text[m.end()..].chars().next();
            !before.is_some_and(|c| c.is_alphanumeric() || c == '.')
                && !after.is_some_and(|c| c.is_alphabetic() || c == '_')
        })
        .filter_map(|m| m.as_str().parse().ok())
        .collect()
}

fn round1(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

fn uses_actual_percentages(text: &str, evidence: &CircuitEvidence) -> bool {
    let actual: Vec<f64> = evidence
        .head_rows()
        .flat_map(|(_, io, s)| [round1(io), round1(s)])
        .collect();
    standalone_numbers(text)
        .into_iter()
        .any(|n| actual.iter().any(|a| (round1(n) - a).abs() < 0.05 + 1e-9))
}

/// Case-insensitive whole-word match; boundaries only where `needle` starts or ends with a word character.
fn mentions(text: &str, needle: &str) -> bool {
    let needle = needle.trim();
    if needle.is_empty() {
        return false;
    }
    let word = |c: Option<char>| c.is_some_and(|c| c.is_alphanumeric() || c == '_');
    let lead = if word(needle.chars().next()) { r"\b" } else { "" };
    let trail = if word(needle.chars().next_back()) { r"\b" } else { "" };
    Regex::new(&format!("(?i){lead}{}{trail}", regex::escape(needle)))
        .map(|re| re.is_match(text))
        .unwrap_or(false)
}

pub fn score_quality(explanation: &Explanation, evidence: &CircuitEvidence) -> QualityScore {
    let text = explanation.text.as_str();
    let mut score = QualityScore {
        mentions_heads: cites_head(text, evidence),
        uses_percentages: uses_actual_percentages(text, evidence),
        mentions_prediction: mentions(text, &evidence.predicted_token),
        mentions_io_name: mentions(text, &evidence.io_name),
        mentions_s_name: mentions(text, &evidence.s_name),
        overall: 0.0,
        concise: explanation.word_count < CONCISE_WORDS,
    };
    score.overall = score.criteria().iter().filter(|&&b| b).count() as f64 / 5.0;
    score
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_inside_identifiers_are_ignored() {
        assert!(standalone_numbers("L9H9 and GPT-2").iter().all(|&n| n == 2.0));
        assert_eq!(standalone_numbers("66.5% and 7.0"), vec![66.5, 7.0]);
        assert!(standalone_numbers("L10H6x").is_empty());
    }

    #[test]
    fn name_matching_respects_word_boundaries() {
        assert!(mentions("predicts 'Mary' here", "Mary"));
        assert!(mentions("MARY", "mary"));
        assert!(!mentions("Maryland", "Mary"));
        assert!(!mentions("anything", ""));
        assert!(mentions("ends with a comma,", ","));
    }
}
