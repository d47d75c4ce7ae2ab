// SPDX-License-Identifier: MIT OR Apache-2.0

//! Circuit selection and post-hoc analysis of faithfulness results.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::IoiExample;
use crate::error::{Error, Result};
use crate::faithfulness::{
    evaluate_circuit, known_role, Aggregates, Circuit, CircuitHead, CircuitMethod, CleanRunSummary, FaithfulnessReport,
};
use crate::model::{HeadIndex, WeightStore};
use crate::patching::{AblationMode, HeadMatrix, MeanActivations};

/// Top-`k` heads by mean effect; ties broken by `(layer, head)`.
pub fn select_circuit(mean_effect: &HeadMatrix, k: usize) -> Result<Circuit> {
    let available = mean_effect.values.len();
    if k > available {
        return Err(Error::TooManyHeads { k, available });
    }
    let heads = mean_effect
        .ranked()
        .into_iter()
        .take(k)
        .map(|(head, effect)| CircuitHead {
            head,
            role: known_role(head),
            mean_effect: Some(effect),
        })
        .collect();
    Circuit::new(heads, CircuitMethod::Patching)
}

/// Thresholds of the failure taxonomy and the comprehensiveness histogram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FailureThresholds {
    /// Comprehensiveness strictly below this is a failure ("low" bucket).
    pub low: f64,
    /// Upper edge (inclusive) of the "near threshold" bucket.
    pub high: f64,
    /// A circuit head dominating more than this share of LD_clean is not "distributed".
    pub single_head_share: f64,
}

impl Default for FailureThresholds {
    fn default() -> Self {
        Self {
            low: 0.15,
            high: 0.25,
            single_head_share: 0.10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComprehensivenessHistogram {
    pub low: usize,
    pub near: usize,
    pub high: usize,
    pub thresholds: (f64, f64),
}

impl ComprehensivenessHistogram {
    pub fn total(&self) -> usize {
        self.low + self.near + self.high
    }

    /// Bucket shares `(low, near, high)`; zeros for an empty histogram.
    pub fn fractions(&self) -> (f64, f64, f64) {
        let n = self.total();
        if n == 0 {
            return (0.0, 0.0, 0.0);
        }
        let n = n as f64;
        (self.low as f64 / n, self.near as f64 / n, self.high as f64 / n)
    }

    pub fn to_csv(&self) -> String {
        let (l, n, h) = self.fractions();
        let (lo, hi) = self.thresholds;
        format!(
            "bucket,count,fraction\n<{lo},{},{l}\n{lo}-{hi},{},{n}\n>{hi},{},{h}\n",
            self.low, self.near, self.high
        )
    }
}

/// Buckets: `< low`, `[low, high]`, `> high`.
pub fn comprehensiveness_histogram(
    report: &FaithfulnessReport,
    thresholds: &FailureThresholds,
) -> ComprehensivenessHistogram {
    histogram_of(report.examples.iter().map(|e| e.comprehensiveness.value), thresholds)
}

pub fn histogram_of(
    values: impl IntoIterator<Item = f64>,
    thresholds: &FailureThresholds,
) -> ComprehensivenessHistogram {
    let mut h = ComprehensivenessHistogram {
        low: 0,
        near: 0,
        high: 0,
        thresholds: (thresholds.low, thresholds.high),
    };
    for v in values {
        if v < thresholds.low {
            h.low += 1;
        } else if v <= thresholds.high {
            h.near += 1;
        } else {
            h.high += 1;
        }
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FailureCategory {
    DistributedComputation,
    MissingCitedHead,
    RedundantHeadActivity,
}

impl std::fmt::Display for FailureCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FailureCategory::DistributedComputation => "DistributedComputation",
            FailureCategory::MissingCitedHead => "MissingCitedHead",
            FailureCategory::RedundantHeadActivity => "RedundantHeadActivity",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureCase {
    pub example_id: usize,
    pub comprehensiveness: f64,
    pub category: FailureCategory,
    /// Largest direct contributors, descending.
    pub top_contributors: Vec<(HeadIndex, f64)>,
    /// Largest contributor outside the circuit.
    pub top_non_circuit: Option<(HeadIndex, f64)>,
}

const TOP_CONTRIBUTORS: usize = 5;

/// Assigns a failure category to a low-comprehensiveness example.
///
/// Rules, in order: the top contributing head is outside the circuit →
/// `MissingCitedHead`; no circuit head exceeds `single_head_share` of
/// `ld_clean` → `DistributedComputation`; otherwise `RedundantHeadActivity`.
pub fn classify_failure(
    example_id: usize,
    ld_clean: f32,
    circuit: &Circuit,
    contributions: &HeadMatrix,
    comprehensiveness: f64,
    thresholds: &FailureThresholds,
) -> Option<FailureCase> {
    if comprehensiveness >= thresholds.low {
        return None;
    }
    let ranked = contributions.ranked();
    let top = ranked.first().map(|&(h, _)| h);
    let category = if top.is_some_and(|h| !circuit.contains(h)) {
        FailureCategory::MissingCitedHead
    } else if circuit
        .heads()
        .iter()
        .all(|&h| contributions.get(h) <= thresholds.single_head_share * ld_clean as f64)
    {
        FailureCategory::DistributedComputation
    } else {
        FailureCategory::RedundantHeadActivity
    };
    Some(FailureCase {
        example_id,
        comprehensiveness,
        category,
        top_contributors: ranked.iter().take(TOP_CONTRIBUTORS).copied().collect(),
        top_non_circuit: ranked.iter().find(|(h, _)| !circuit.contains(*h)).copied(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureSummary {
    pub cases: Vec<FailureCase>,
    pub by_category: BTreeMap<FailureCategory, usize>,
    /// How often each head is the top non-circuit contributor among failures, descending.
    pub top_non_circuit_frequency: Vec<(HeadIndex, f64)>,
}

pub fn classify_failures(
    report: &FaithfulnessReport,
    clean: &[CleanRunSummary],
    circuit: &Circuit,
    thresholds: &FailureThresholds,
) -> FailureSummary {
    let by_id: BTreeMap<usize, &CleanRunSummary> = clean.iter().map(|c| (c.example_id, c)).collect();
    let cases: Vec<FailureCase> = report
        .examples
        .iter()
        .filter_map(|e| {
            let summary = by_id.get(&e.example_id)?;
            classify_failure(
                e.example_id,
                e.ld_clean,
                circuit,
                &summary.contributions,
                e.comprehensiveness.value,
                thresholds,
            )
        })
        .collect();
    let mut by_category = BTreeMap::new();
    let mut counts: BTreeMap<HeadIndex, usize> = BTreeMap::new();
    for c in &cases {
        *by_category.entry(c.category).or_insert(0) += 1;
        if let Some((h, _)) = c.top_non_circuit {
            *counts.entry(h).or_insert(0) += 1;
        }
    }
    let mut top_non_circuit_frequency: Vec<(HeadIndex, f64)> = counts
        .into_iter()
        .map(|(h, n)| (h, n as f64 / cases.len() as f64))
        .collect();
    top_non_circuit_frequency.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    FailureSummary {
        cases,
        by_category,
        top_non_circuit_frequency,
    }
}

impl FailureSummary {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("example_id,comprehensiveness,category,top_contributors,top_non_circuit\n");
        for c in &self.cases {
            let tops: Vec<String> = c.top_contributors.iter().map(|(h, v)| format!("{h}:{v:.4}")).collect();
            let non = c
                .top_non_circuit
                .map(|(h, v)| format!("{h}:{v:.4}"))
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                c.example_id,
                c.comprehensiveness,
                c.category,
                tops.join(" "),
                non
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationResult {
    pub extra_head: HeadIndex,
    pub f1_before: f64,
    pub f1_after: f64,
    pub before: Aggregates,
    pub after: Aggregates,
}

impl AugmentationResult {
    pub fn to_csv(&self) -> String {
        let row = |name: &str, a: &Aggregates| {
            format!("{name},{},{},{}\n", a.sufficiency_mean, a.comprehensiveness_mean, a.f1)
        };
        format!(
            "circuit,sufficiency,comprehensiveness,f1\n{}{}",
            row("base", &self.before),
            row(&format!("base+{}", self.extra_head), &self.after)
        )
    }
}

/// Re-evaluates `circuit` with `extra` added and reports F1 before and after.
#[allow(clippy::too_many_arguments)]
pub fn augmentation_test(
    weights: &WeightStore,
    dataset: &[IoiExample],
    clean: &[CleanRunSummary],
    circuit: &Circuit,
    baseline: &FaithfulnessReport,
    extra: HeadIndex,
    mode: AblationMode,
    means: Option<&MeanActivations>,
) -> Result<AugmentationResult> {
    extra.check(weights.config())?;
    if circuit.contains(extra) {
        return Err(Error::Config(format!("{extra} is already in the circuit")));
    }
    let augmented = circuit.with_head(extra, None)?;
    let after = evaluate_circuit(weights, dataset, clean, &augmented, mode, means)?;
    Ok(AugmentationResult {
        extra_head: extra,
        f1_before: baseline.aggregates.f1,
        f1_after: after.aggregates.f1,
        before: baseline.aggregates.clone(),
        after: after.aggregates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_break_by_layer_then_head() {
        let m = HeadMatrix {
            n_layers: 3,
            n_heads: 2,
            values: vec![0.5; 6],
        };
        let c = select_circuit(&m, 3).unwrap();
        assert_eq!(
            c.heads(),
            vec![HeadIndex::new(0, 0), HeadIndex::new(0, 1), HeadIndex::new(1, 0)]
        );
        assert!(select_circuit(&m, 7).is_err());
    }

    #[test]
    fn selects_descending_with_roles() {
        let mut m = HeadMatrix::zeros(12, 12);
        m.set(HeadIndex::new(9, 9), 0.174);
        m.set(HeadIndex::new(8, 10), 0.123);
        m.set(HeadIndex::new(0, 0), -0.3);
        let c = select_circuit(&m, 2).unwrap();
        assert_eq!(c.names(), vec!["L9H9", "L8H10"]);
        assert_eq!(c.entries()[0].role, crate::faithfulness::Role::NameMover);
        assert_eq!(c.entries()[1].role, crate::faithfulness::Role::SInhibition);
        assert_eq!(select_circuit(&m, 1).unwrap().names(), vec!["L9H9"]);
    }

    #[test]
    fn histogram_boundaries() {
        let t = FailureThresholds::default();
        let h = histogram_of([0.0, 0.1499, 0.15, 0.25, 0.2501, 1.0], &t);
        assert_eq!((h.low, h.near, h.high), (2, 2, 2));
        let zeros = histogram_of([0.0; 4], &t);
        assert_eq!(zeros.fractions(), (1.0, 0.0, 0.0));
    }

    fn circuit() -> Circuit {
        Circuit::from_heads(&[HeadIndex::new(9, 9), HeadIndex::new(9, 6)], CircuitMethod::Patching).unwrap()
    }

    #[test]
    fn classification_rules() {
        let t = FailureThresholds::default();
        let mut contrib = HeadMatrix::zeros(12, 12);
        contrib.set(HeadIndex::new(10, 10), 1.0);
        contrib.set(HeadIndex::new(9, 9), 0.5);
        assert!(classify_failure(0, 3.0, &circuit(), &contrib, 0.30, &t).is_none());

        let case = classify_failure(0, 3.0, &circuit(), &contrib, 0.05, &t).unwrap();
        assert_eq!(case.category, FailureCategory::MissingCitedHead);
        assert_eq!(case.top_non_circuit.unwrap().0, HeadIndex::new(10, 10));

        contrib.set(HeadIndex::new(10, 10), 0.0);
        contrib.set(HeadIndex::new(9, 9), 0.2);
        let case = classify_failure(0, 3.0, &circuit(), &contrib, 0.05, &t).unwrap();
        assert_eq!(case.category, FailureCategory::DistributedComputation);

        contrib.set(HeadIndex::new(9, 9), 0.9);
        let case = classify_failure(0, 3.0, &circuit(), &contrib, 0.05, &t).unwrap();
        assert_eq!(case.category, FailureCategory::RedundantHeadActivity);
    }
}
