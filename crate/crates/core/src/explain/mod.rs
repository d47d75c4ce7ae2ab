// SPDX-License-Identifier: MIT OR Apache-2.0

//! Natural-language explanations of circuit evidence and their quality scores.

mod compare;
mod evidence;
pub mod llm;
mod quality;
mod template;

pub use compare::{
    compare_methods, generate_llm_explanations, summarize_quality, LlmBatch, MethodQuality, QualityComparison,
    ScoredExplanation,
};
pub use evidence::{extract_evidence, CircuitEvidence};
pub use llm::{
    backend_from_config, build_prompt, llm_explain, llm_explain_all, ChatBackend, HttpChatClient, LlmConfig, LlmPrompt,
    MockChatClient,
};
pub use quality::{score_quality, QualityScore, CONCISE_WORDS};
pub use template::{template_explain, Explanation, ExplanationMethod};

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::faithfulness::Role;
    use crate::model::HeadIndex;

    /// The Mary/John store prompt with the two name movers cited.
    pub(crate) fn mary_john() -> CircuitEvidence {
        let (h99, h96) = (HeadIndex::new(9, 9), HeadIndex::new(9, 6));
        CircuitEvidence {
            example_id: 0,
            prompt: "When Mary and John went to the store, John gave a drink to".into(),
            predicted_token: "Mary".into(),
            io_name: "Mary".into(),
            s_name: "John".into(),
            confidence: 0.61,
            cited_heads: vec![h99, h96],
            roles: BTreeMap::from([(h99, Role::NameMover), (h96, Role::NameMover)]),
            attention_to_io: BTreeMap::from([(h99, 66.5), (h96, 48.21)]),
            attention_to_s: BTreeMap::from([(h99, 7.0), (h96, 12.0)]),
            contributions: BTreeMap::from([(h99, 1.2), (h96, 0.7)]),
        }
    }

    const FAITHFUL: &str = "GPT-2 predicts 'Mary' because L9H9 attends to Mary with 66.5% attention while giving John only 7.0%, identifying Mary as the indirect object recipient.";

    #[test]
    fn template_text_is_exact() {
        let e = template_explain(&mary_john()).unwrap();
        assert_eq!(
            e.text,
            "The model predicts 'Mary' because L9H9 and L9H6 attend to it with high attention, copying the indirect object."
        );
        assert_eq!(e.word_count, 18);
        assert_eq!(e.method, ExplanationMethod::Template);
    }

    #[test]
    fn template_grammar_follows_head_count() {
        let mut ev = mary_john();
        ev.cited_heads.truncate(1);
        assert!(template_explain(&ev)
            .unwrap()
            .text
            .contains("because L9H9 attends to it"));
        ev.cited_heads = ["L9H9", "L9H6", "L10H0"].iter().map(|s| s.parse().unwrap()).collect();
        assert!(template_explain(&ev)
            .unwrap()
            .text
            .contains("L9H9, L9H6 and L10H0 attend"));
        ev.cited_heads.clear();
        assert!(template_explain(&ev).is_err());
    }

    #[test]
    fn template_scores_three_of_five() {
        let ev = mary_john();
        let s = score_quality(&template_explain(&ev).unwrap(), &ev);
        assert_eq!(s.criteria(), [true, false, true, true, false]);
        assert_eq!(s.overall, 0.6);
    }

    #[test]
    fn faithful_llm_text_scores_five_of_five() {
        let ev = mary_john();
        let e = Explanation::new(FAITHFUL, ExplanationMethod::LlmGenerated, 0).unwrap();
        let s = score_quality(&e, &ev);
        assert_eq!(s.overall, 1.0);
        assert_eq!(e.word_count, 23);
        assert!(s.concise);
    }

    #[test]
    fn irrelevant_text_scores_zero() {
        let e = Explanation::new("The answer is obvious.", ExplanationMethod::LlmGenerated, 0).unwrap();
        assert_eq!(score_quality(&e, &mary_john()).overall, 0.0);
        assert!(Explanation::new("  ", ExplanationMethod::Template, 0).is_err());
    }

    #[test]
    fn percentage_matching_tolerates_rendering() {
        let ev = mary_john();
        let score = |t: &str| score_quality(&Explanation::new(t, ExplanationMethod::LlmGenerated, 0).unwrap(), &ev);
        assert!(score("about 48.2% of attention").uses_percentages);
        assert!(score("7 percent").uses_percentages);
        assert!(score("66.5 of it").uses_percentages);
        assert!(!score("66% of it").uses_percentages);
        assert!(!score("L9H9 only").uses_percentages);
        // Uncited heads do not count.
        assert!(!score("L0H1 is active").mentions_heads);
    }

    #[test]
    fn prompt_serializes_all_evidence() {
        let p = build_prompt(&mary_john());
        for needle in [
            "L9H9 (Name Mover)",
            "66.5%",
            "7.0%",
            "48.2%",
            "Mary",
            "John",
            "61.0%",
            "'Mary'",
        ] {
            assert!(p.user.contains(needle), "missing {needle}: {}", p.user);
        }
        assert!(!p.system.is_empty());
        assert!(!p.user.contains('{'));
    }

    #[test]
    fn mock_fills_placeholders() {
        let mock = MockChatClient::with_default(
            "GPT-2 predicts '{pred}' because {head} attends to {io} with {io_pct}% attention while giving {s} only {s_pct}%, identifying {io} as the indirect object recipient.",
        );
        assert_eq!(llm_explain(&mary_john(), &mock).unwrap().text, FAITHFUL);
    }

    #[test]
    fn identical_output_scores_identically() {
        let ev = vec![mary_john()];
        let text = template_explain(&ev[0]).unwrap().text;
        let cmp = compare_methods(&ev, Some(&MockChatClient::with_default(text)), 2).unwrap();
        assert_eq!(cmp.llm.as_ref().unwrap().overall, cmp.template.overall);
        assert_eq!(cmp.relative_improvement, Some(0.0));
    }
}
