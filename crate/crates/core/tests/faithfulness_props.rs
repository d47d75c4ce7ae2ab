// SPDX-License-Identifier: MIT OR Apache-2.0

//! Metric identities, failure analysis and augmentation invariants.

mod common;

use std::collections::BTreeMap;

use common::{synthetic_dataset, tiny_config};
use headlens::circuit::{augmentation_test, classify_failure, histogram_of, FailureThresholds};
use headlens::explain::{score_quality, CircuitEvidence, Explanation, ExplanationMethod};
use headlens::faithfulness::{evaluate_circuit, f1, pearson_r, Circuit, CircuitMethod, CleanRunSummary, Role};
use headlens::patching::{AblationMode, HeadMatrix, MeanActivations};
use headlens::{forward, HeadIndex, WeightStore};
use proptest::prelude::*;

#[test]
fn pearson_matches_numpy_fixtures() {
    let x: Vec<f64> = (1..=10).map(f64::from).collect();
    let y = [2.0, 4.0, 5.0, 4.0, 5.0, 7.0, 8.0, 9.0, 10.0, 12.0];
    assert!((pearson_r(&x, &y).unwrap() - 0.9719076165935988).abs() < 1e-12);

    let conf = [0.91, 0.55, 0.72, 0.33, 0.88, 0.61, 0.47, 0.95, 0.52, 0.70];
    let comp = [0.05, 0.40, 0.10, 0.31, 0.22, 0.00, 0.18, 0.27, 0.12, 0.36];
    assert!((pearson_r(&conf, &comp).unwrap() - -0.18437125469848084).abs() < 1e-12);
}

#[test]
fn pearson_is_undefined_for_constant_input() {
    assert!(pearson_r(&[1.0; 5], &[1.0, 2.0, 3.0, 4.0, 5.0]).is_err());
    assert!(pearson_r(&[1.0], &[2.0]).is_err());
}

proptest! {
    #[test]
    fn pearson_is_affine_invariant(
        pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..40),
        a in 0.1f64..10.0,
        b in -50.0f64..50.0,
    ) {
        let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        if let Ok(r) = pearson_r(&x, &y) {
            prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&r));
            let xs: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let r2 = pearson_r(&xs, &y).unwrap();
            prop_assert!((r - r2).abs() < 1e-6, "{} vs {}", r, r2);
            let neg: Vec<f64> = x.iter().map(|v| -a * v + b).collect();
            prop_assert!((r + pearson_r(&neg, &y).unwrap()).abs() < 1e-6);
        }
    }

    #[test]
    fn f1_is_symmetric_and_bounded(s in 0.0f64..=1.0, c in 0.0f64..=1.0) {
        let v = f1(s, c);
        prop_assert_eq!(v, f1(c, s));
        prop_assert!(v <= s.max(c) + 1e-12);
        prop_assert!(v >= s.min(c) - 1e-12);
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn histogram_partitions_every_value(values in prop::collection::vec(0.0f64..=1.0, 0..100)) {
        let h = histogram_of(values.iter().copied(), &FailureThresholds::default());
        prop_assert_eq!(h.total(), values.len());
        let (low, near, high) = h.fractions();
        if !values.is_empty() {
            prop_assert!((low + near + high - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn classification_is_total_below_the_low_threshold(
        contribs in prop::collection::vec(-2.0f64..2.0, 8),
        circuit_mask in prop::collection::vec(any::<bool>(), 8),
        comp in 0.0f64..1.0,
        ld in 0.1f32..5.0,
    ) {
        let m = HeadMatrix { n_layers: 2, n_heads: 4, values: contribs };
        let mut heads: Vec<HeadIndex> = (0..8)
            .filter(|&i| circuit_mask[i])
            .map(|i| HeadIndex::new(i / 4, i % 4))
            .collect();
        if heads.is_empty() {
            heads.push(HeadIndex::new(0, 0));
        }
        let circuit = Circuit::from_heads(&heads, CircuitMethod::Patching).unwrap();
        let t = FailureThresholds::default();
        let case = classify_failure(0, ld, &circuit, &m, comp, &t);
        prop_assert_eq!(case.is_some(), comp < t.low);
        if let Some(case) = case {
            prop_assert!(case.top_contributors.len() <= 5);
            if let Some((h, _)) = case.top_non_circuit {
                prop_assert!(!circuit.contains(h));
            }
        }
    }

    #[test]
    fn adding_a_mention_never_lowers_quality(suffix in prop::sample::select(vec![
        " L9H9", " Mary", " John", " 62.3%", " because", " 8.1 percent",
    ])) {
        let ev = evidence();
        let base = "The model looks at names.";
        let before = score_quality(&Explanation::new(base, ExplanationMethod::Template, 0).unwrap(), &ev);
        let text = format!("{base}{suffix}");
        let after = score_quality(&Explanation::new(text, ExplanationMethod::Template, 0).unwrap(), &ev);
        prop_assert!(after.overall >= before.overall);
        for (b, a) in before.criteria().iter().zip(after.criteria()) {
            prop_assert!(a || !b);
        }
    }
}

fn evidence() -> CircuitEvidence {
    let h = HeadIndex::new(9, 9);
    CircuitEvidence {
        example_id: 0,
        prompt: "When Mary and John went to the store, John gave a drink to".into(),
        predicted_token: "Mary".into(),
        io_name: "Mary".into(),
        s_name: "John".into(),
        confidence: 0.7,
        cited_heads: vec![h],
        roles: BTreeMap::from([(h, Role::NameMover)]),
        attention_to_io: BTreeMap::from([(h, 62.3)]),
        attention_to_s: BTreeMap::from([(h, 8.1)]),
        contributions: BTreeMap::from([(h, 1.2)]),
    }
}

/// Tiny model with the output projection rows of `head` zeroed.
fn silence_head(head: HeadIndex) -> WeightStore {
    let cfg = tiny_config();
    let mut tensors = WeightStore::random(&cfg, 21, 0.4).unwrap().to_tensors();
    let w = tensors
        .get_mut(&format!("h.{}.attn.c_proj.weight", head.layer))
        .unwrap();
    let d = cfg.d_model;
    for r in head.head * cfg.d_head..(head.head + 1) * cfg.d_head {
        w.data[r * d..(r + 1) * d].iter_mut().for_each(|v| *v = 0.0);
    }
    WeightStore::from_tensors(cfg, tensors).unwrap()
}

#[test]
fn augmenting_with_a_silent_head_changes_nothing() {
    let silent = HeadIndex::new(1, 2);
    let w = silence_head(silent);
    let data = synthetic_dataset(10, 96);
    let clean: Vec<CleanRunSummary> = data
        .iter()
        .map(|ex| {
            let out = forward(&w, &ex.clean_tokens, &[]).unwrap();
            CleanRunSummary::new(&w, ex, &out.cache, &out.logits)
        })
        .collect();
    for c in &clean {
        assert!(c.contributions.get(silent).abs() < 1e-9);
    }
    let circuit = Circuit::from_heads(&[HeadIndex::new(0, 1), HeadIndex::new(1, 0)], CircuitMethod::Patching).unwrap();
    let means = MeanActivations::compute(&w, &data).unwrap();
    for (mode, means) in [(AblationMode::Zero, None), (AblationMode::MeanSubstitute, Some(&means))] {
        let base = evaluate_circuit(&w, &data, &clean, &circuit, mode, means).unwrap();
        let aug = augmentation_test(&w, &data, &clean, &circuit, &base, silent, mode, means).unwrap();
        assert_eq!(aug.before.n, aug.after.n);
        assert!((aug.f1_after - aug.f1_before).abs() < 1e-6, "{mode:?}");
        assert!((aug.after.sufficiency_mean - aug.before.sufficiency_mean).abs() < 1e-6);
        assert!((aug.after.comprehensiveness_mean - aug.before.comprehensiveness_mean).abs() < 1e-6);
    }
    let base = evaluate_circuit(&w, &data, &clean, &circuit, AblationMode::Zero, None).unwrap();
    let inside = HeadIndex::new(0, 1);
    assert!(augmentation_test(&w, &data, &clean, &circuit, &base, inside, AblationMode::Zero, None).is_err());
}
