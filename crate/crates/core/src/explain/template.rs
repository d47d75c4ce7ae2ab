// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use super::CircuitEvidence;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExplanationMethod {
    Template,
    LlmGenerated,
}

impl std::fmt::Display for ExplanationMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ExplanationMethod::Template => "template",
            ExplanationMethod::LlmGenerated => "llm",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub text: String,
    pub method: ExplanationMethod,
    pub evidence_id: usize,
    pub word_count: usize,
}

impl Explanation {
    pub fn new(text: impl Into<String>, method: ExplanationMethod, evidence_id: usize) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::EmptyExplanation);
        }
        let word_count = text.split_whitespace().count();
        Ok(Self {
            text,
            method,
            evidence_id,
            word_count,
        })
    }
}

/// "A", "A and B", "A, B and C".
fn join_heads(names: &[String]) -> String {
    match names {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

/// Fills the fixed explanation template from `evidence`.
pub fn template_explain(evidence: &CircuitEvidence) -> Result<Explanation> {
    if evidence.cited_heads.is_empty() {
        return Err(Error::NoCitedHeads);
    }
    let names: Vec<String> = evidence.cited_heads.iter().map(ToString::to_string).collect();
    let verb = if names.len() == 1 { "attends" } else { "attend" };
    let text = format!(
        "The model predicts '{}' because {} {verb} to it with high attention, copying the indirect object.",
        evidence.predicted_token,
        join_heads(&names)
    );
    Explanation::new(text, ExplanationMethod::Template, evidence.example_id)
}
