// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::IoiExample;
use crate::error::{Error, Result};
use crate::faithfulness::{confidence, Circuit, Role};
use crate::model::{ActivationCache, HeadIndex, TokenId};
use crate::tokenizer::BpeTokenizer;

/// Circuit facts about one prompt that an explanation may cite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitEvidence {
    pub example_id: usize,
    pub prompt: String,
    pub predicted_token: String,
    pub io_name: String,
    pub s_name: String,
    /// Probability of the predicted token.
    pub confidence: f64,
    pub cited_heads: Vec<HeadIndex>,
    pub roles: BTreeMap<HeadIndex, Role>,
    /// Final-position attention mass on the IO name, in percent.
    pub attention_to_io: BTreeMap<HeadIndex, f64>,
    /// Final-position attention mass on both S name positions, in percent.
    pub attention_to_s: BTreeMap<HeadIndex, f64>,
    pub contributions: BTreeMap<HeadIndex, f64>,
}

impl CircuitEvidence {
    /// Heads in citation order with their IO and S attention percentages.
    pub fn head_rows(&self) -> impl Iterator<Item = (HeadIndex, f64, f64)> + '_ {
        self.cited_heads.iter().map(|h| {
            (
                *h,
                self.attention_to_io.get(h).copied().unwrap_or(0.0),
                self.attention_to_s.get(h).copied().unwrap_or(0.0),
            )
        })
    }
}

fn argmax(logits: &[f32]) -> usize {
    logits
        .iter()
        .enumerate()
        .fold(
            (0, f32::NEG_INFINITY),
            |best, (i, &v)| if v > best.1 { (i, v) } else { best },
        )
        .0
}

/// Gathers evidence for `circuit` from the clean run of `example`.
///
/// `logits` are the final-position logits and `contributions` the direct
/// logit contributions of every head on that run.
pub fn extract_evidence(
    tokenizer: &BpeTokenizer,
    example: &IoiExample,
    cache: &ActivationCache,
    logits: &[f32],
    circuit: &Circuit,
    contributions: &crate::patching::HeadMatrix,
) -> Result<CircuitEvidence> {
    let query = cache.seq_len() - 1;
    if example.s2_pos >= cache.seq_len() {
        return Err(Error::Dataset(format!(
            "example {} does not match the cached run",
            example.id
        )));
    }
    let predicted = argmax(logits) as TokenId;
    let predicted_token = tokenizer.decode(&[predicted])?.trim().to_string();

    let mut attention_to_io = BTreeMap::new();
    let mut attention_to_s = BTreeMap::new();
    let mut contrib = BTreeMap::new();
    let mut roles = BTreeMap::new();
    for entry in circuit.entries() {
        let row = cache.attention_row(entry.head, query);
        let io = row[example.io_pos] as f64 * 100.0;
        let s = (row[example.s1_pos] as f64 + row[example.s2_pos] as f64) * 100.0;
        attention_to_io.insert(entry.head, io.clamp(0.0, 100.0));
        attention_to_s.insert(entry.head, s.clamp(0.0, 100.0));
        contrib.insert(entry.head, contributions.get(entry.head));
        roles.insert(entry.head, entry.role);
    }
    Ok(CircuitEvidence {
        example_id: example.id,
        prompt: example.clean_prompt.clone(),
        predicted_token,
        io_name: example.io_name.clone(),
        s_name: example.s_name.clone(),
        confidence: confidence(logits),
        cited_heads: circuit.heads(),
        roles,
        attention_to_io,
        attention_to_s,
        contributions: contrib,
    })
}
