// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use super::llm::{llm_explain_all, ChatBackend};
use super::{score_quality, template_explain, CircuitEvidence, Explanation, ExplanationMethod, QualityScore};
use crate::error::{Error, Result};
use crate::patching::Exclusion;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredExplanation {
    pub explanation: Explanation,
    pub score: QualityScore,
}

/// Criterion pass rates and means for one generation method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodQuality {
    pub method: ExplanationMethod,
    pub n: usize,
    pub overall: f64,
    pub mentions_heads: f64,
    pub uses_percentages: f64,
    pub mentions_prediction: f64,
    pub mentions_io_name: f64,
    pub mentions_s_name: f64,
    pub both_names: f64,
    pub mean_word_count: f64,
    pub concise: f64,
}

impl MethodQuality {
    pub fn from_scored(method: ExplanationMethod, scored: &[ScoredExplanation]) -> Self {
        let n = scored.len();
        let rate = |f: &dyn Fn(&ScoredExplanation) -> bool| {
            if n == 0 {
                0.0
            } else {
                scored.iter().filter(|s| f(s)).count() as f64 / n as f64
            }
        };
        let mean = |f: &dyn Fn(&ScoredExplanation) -> f64| {
            if n == 0 {
                0.0
            } else {
                scored.iter().map(f).sum::<f64>() / n as f64
            }
        };
        Self {
            method,
            n,
            overall: mean(&|s| s.score.overall),
            mentions_heads: rate(&|s| s.score.mentions_heads),
            uses_percentages: rate(&|s| s.score.uses_percentages),
            mentions_prediction: rate(&|s| s.score.mentions_prediction),
            mentions_io_name: rate(&|s| s.score.mentions_io_name),
            mentions_s_name: rate(&|s| s.score.mentions_s_name),
            both_names: rate(&|s| s.score.mentions_io_name && s.score.mentions_s_name),
            mean_word_count: mean(&|s| s.explanation.word_count as f64),
            concise: rate(&|s| s.score.concise),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityComparison {
    pub template: MethodQuality,
    pub llm: Option<MethodQuality>,
    /// `(llm - template) / template` of the overall quality.
    pub relative_improvement: Option<f64>,
    /// Some LLM requests failed; `llm` covers only the successful ones.
    pub llm_partial: bool,
    pub llm_failures: Vec<Exclusion>,
    pub template_explanations: Vec<ScoredExplanation>,
    pub llm_explanations: Vec<ScoredExplanation>,
}

impl QualityComparison {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "method,n,overall,mentions_heads,uses_percentages,mentions_prediction,mentions_io_name,mentions_s_name,both_names,mean_word_count,concise\n",
        );
        for q in std::iter::once(&self.template).chain(self.llm.as_ref()) {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                q.method,
                q.n,
                q.overall,
                q.mentions_heads,
                q.uses_percentages,
                q.mentions_prediction,
                q.mentions_io_name,
                q.mentions_s_name,
                q.both_names,
                q.mean_word_count,
                q.concise
            ));
        }
        out
    }
}

fn score_all(evidence: &[CircuitEvidence], explanations: Vec<Explanation>) -> Vec<ScoredExplanation> {
    explanations
        .into_iter()
        .map(|explanation| {
            let e = evidence
                .iter()
                .find(|e| e.example_id == explanation.evidence_id)
                .expect("explanation built from this evidence");
            ScoredExplanation {
                score: score_quality(&explanation, e),
                explanation,
            }
        })
        .collect()
}

/// LLM explanations that succeeded plus the examples whose requests failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmBatch {
    pub explanations: Vec<Explanation>,
    pub failures: Vec<Exclusion>,
}

/// Requests an LLM explanation for every example; errors only when all of them fail.
pub fn generate_llm_explanations(
    evidence: &[CircuitEvidence],
    client: &dyn ChatBackend,
    concurrency: usize,
) -> Result<LlmBatch> {
    let (mut explanations, mut failures) = (Vec::new(), Vec::new());
    for (e, result) in evidence.iter().zip(llm_explain_all(evidence, client, concurrency)?) {
        match result {
            Ok(x) => explanations.push(x),
            Err(err) => failures.push(Exclusion {
                example_id: e.example_id,
                reason: err.to_string(),
            }),
        }
    }
    if explanations.is_empty() && !failures.is_empty() {
        return Err(Error::Llm(format!(
            "every LLM request failed; first error: {}",
            failures[0].reason
        )));
    }
    Ok(LlmBatch { explanations, failures })
}

/// Scores already generated explanations against their evidence.
pub fn summarize_quality(
    evidence: &[CircuitEvidence],
    template: Vec<Explanation>,
    llm: Option<LlmBatch>,
) -> Result<QualityComparison> {
    if evidence.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let known = |x: &Explanation| evidence.iter().any(|e| e.example_id == x.evidence_id);
    if let Some(bad) = template
        .iter()
        .chain(llm.iter().flat_map(|b| &b.explanations))
        .find(|x| !known(x))
    {
        return Err(Error::Dataset(format!(
            "explanation for unknown example {}",
            bad.evidence_id
        )));
    }
    let template_scored = score_all(evidence, template);
    let template = MethodQuality::from_scored(ExplanationMethod::Template, &template_scored);
    let (llm, llm_scored, failures) = match llm {
        Some(batch) => {
            let scored = score_all(evidence, batch.explanations);
            (
                Some(MethodQuality::from_scored(ExplanationMethod::LlmGenerated, &scored)),
                scored,
                batch.failures,
            )
        }
        None => (None, Vec::new(), Vec::new()),
    };
    let relative_improvement = llm
        .as_ref()
        .filter(|_| template.overall > 0.0)
        .map(|l| (l.overall - template.overall) / template.overall);
    Ok(QualityComparison {
        template,
        llm,
        relative_improvement,
        llm_partial: !failures.is_empty(),
        llm_failures: failures,
        template_explanations: template_scored,
        llm_explanations: llm_scored,
    })
}

/// Scores template and (when a client is given) LLM explanations on the same evidence.
pub fn compare_methods(
    evidence: &[CircuitEvidence],
    client: Option<&dyn ChatBackend>,
    concurrency: usize,
) -> Result<QualityComparison> {
    let template = evidence.iter().map(template_explain).collect::<Result<Vec<_>>>()?;
    let llm = client
        .map(|c| generate_llm_explanations(evidence, c, concurrency))
        .transpose()?;
    summarize_quality(evidence, template, llm)
}
