// SPDX-License-Identifier: MIT OR Apache-2.0

//! Circuit-level sufficiency, comprehensiveness and F1, plus the baseline
//! circuits they are compared against.
//!
//! - sufficiency = sum of cited heads' direct contributions / LD_clean
//! - comprehensiveness = 1 - LD_ablated / LD_clean
//!
//! Both are clamped to `[0, 1]`; raw values are kept alongside.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::IoiExample;
use crate::error::{Error, Result};
use crate::model::{ActivationCache, HeadIndex, ModelConfig, WeightStore};
use crate::patching::{ablate_heads, logit_diff, AblationMode, Exclusion, HeadMatrix, MeanActivations};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    NameMover,
    SInhibition,
    BackupNameMover,
    Unassigned,
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Role::NameMover => "Name Mover",
            Role::SInhibition => "S-Inhibition",
            Role::BackupNameMover => "Backup Name Mover",
            Role::Unassigned => "Unassigned",
        })
    }
}

/// How a circuit was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CircuitMethod {
    Patching,
    AttentionEntropy,
    Random,
}

impl std::fmt::Display for CircuitMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CircuitMethod::Patching => "patching",
            CircuitMethod::AttentionEntropy => "attention_entropy",
            CircuitMethod::Random => "random",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitHead {
    pub head: HeadIndex,
    pub role: Role,
    /// Mean effect recovery, when a patching sweep is available.
    pub mean_effect: Option<f64>,
}

/// An ordered, duplicate-free set of heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Circuit {
    heads: Vec<CircuitHead>,
    pub provenance: CircuitMethod,
}

impl Circuit {
    pub fn new(heads: Vec<CircuitHead>, provenance: CircuitMethod) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = heads.iter().find(|h| !seen.insert(h.head)) {
            return Err(Error::Config(format!("duplicate head {} in circuit", dup.head)));
        }
        Ok(Self { heads, provenance })
    }

    /// Builds a circuit from bare indices with roles from [`known_role`].
    pub fn from_heads(heads: &[HeadIndex], provenance: CircuitMethod) -> Result<Self> {
        Self::new(
            heads
                .iter()
                .map(|&head| CircuitHead {
                    head,
                    role: known_role(head),
                    mean_effect: None,
                })
                .collect(),
            provenance,
        )
    }

    pub fn entries(&self) -> &[CircuitHead] {
        &self.heads
    }

    pub fn heads(&self) -> Vec<HeadIndex> {
        self.heads.iter().map(|h| h.head).collect()
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    pub fn contains(&self, head: HeadIndex) -> bool {
        self.heads.iter().any(|h| h.head == head)
    }

    pub fn role(&self, head: HeadIndex) -> Option<Role> {
        self.heads.iter().find(|h| h.head == head).map(|h| h.role)
    }

    /// Fills `mean_effect` from a patching sweep.
    pub fn annotate_effects(&mut self, mean_effect: &HeadMatrix) {
        for h in &mut self.heads {
            h.mean_effect = Some(mean_effect.get(h.head));
        }
    }

    /// This circuit plus `extra` (appended last).
    pub fn with_head(&self, extra: HeadIndex, mean_effect: Option<f64>) -> Result<Self> {
        let mut heads = self.heads.clone();
        heads.push(CircuitHead {
            head: extra,
            role: known_role(extra),
            mean_effect,
        });
        Self::new(heads, self.provenance)
    }

    pub fn names(&self) -> Vec<String> {
        self.heads.iter().map(|h| h.head.to_string()).collect()
    }
}

/// Roles of the reference IOI circuit heads in GPT-2 Small; everything else is unassigned.
pub fn known_role(head: HeadIndex) -> Role {
    match (head.layer, head.head) {
        (9, 9) | (9, 6) => Role::NameMover,
        (8, 10) | (7, 3) => Role::SInhibition,
        (10, 6) | (10, 0) => Role::BackupNameMover,
        _ => Role::Unassigned,
    }
}

/// A metric clamped to `[0, 1]` with its unclamped value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Clamped {
    pub value: f64,
    pub raw: f64,
}

impl Clamped {
    pub fn new(raw: f64) -> Self {
        Self {
            value: raw.clamp(0.0, 1.0),
            raw,
        }
    }
}

fn require_correct(example_id: usize, ld_clean: f32) -> Result<()> {
    if ld_clean > 0.0 {
        Ok(())
    } else {
        Err(Error::IncorrectPrediction { example_id, ld_clean })
    }
}

/// Share of `ld_clean` carried by the cited heads' direct contributions.
pub fn sufficiency(
    example_id: usize,
    ld_clean: f32,
    cited: &[HeadIndex],
    contributions: &HeadMatrix,
) -> Result<Clamped> {
    require_correct(example_id, ld_clean)?;
    let total: f64 = cited.iter().map(|&h| contributions.get(h)).sum();
    Ok(Clamped::new(total / ld_clean as f64))
}

/// Fractional drop of the logit difference when the cited heads are ablated.
pub fn comprehensiveness(example_id: usize, ld_clean: f32, ld_ablated: f32) -> Result<Clamped> {
    require_correct(example_id, ld_clean)?;
    Ok(Clamped::new(1.0 - ld_ablated as f64 / ld_clean as f64))
}

/// Harmonic mean; 0 when both inputs are 0.
pub fn f1(sufficiency: f64, comprehensiveness: f64) -> f64 {
    let denom = sufficiency + comprehensiveness;
    if denom <= 0.0 {
        0.0
    } else {
        2.0 * sufficiency * comprehensiveness / denom
    }
}

/// Softmax probability of the most likely token.
pub fn confidence(logits: &[f32]) -> f64 {
    let max = logits.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
    let total: f64 = logits.iter().map(|&v| (v as f64 - max).exp()).sum();
    1.0 / total
}

/// Pearson product-moment correlation.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::UndefinedCorrelation(format!(
            "lengths {} and {} differ",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::UndefinedCorrelation("need at least two points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Shannon entropy (nats) of a probability row; `0 ln 0 = 0`.
pub fn attention_entropy(row: &[f32]) -> f64 {
    row.iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| {
            let p = p as f64;
            -p * p.ln()
        })
        .sum()
}

/// Mean final-position attention entropy of every head.
pub fn mean_final_entropy(config: &ModelConfig, caches: &[&ActivationCache]) -> HeadMatrix {
    let mut out = HeadMatrix::for_config(config);
    if caches.is_empty() {
        return out;
    }
    for h in HeadIndex::all(config) {
        let total: f64 = caches
            .iter()
            .map(|c| {
                let row = c.attention_row(h, c.seq_len() - 1);
                attention_entropy(&row.to_vec())
            })
            .sum();
        out.set(h, total / caches.len() as f64);
    }
    out
}

/// The `k` heads with the most focused (lowest-entropy) final-position attention.
pub fn attention_entropy_circuit(config: &ModelConfig, caches: &[&ActivationCache], k: usize) -> Result<Circuit> {
    let total = config.total_heads();
    if k > total {
        return Err(Error::TooManyHeads { k, available: total });
    }
    let entropy = mean_final_entropy(config, caches);
    let mut ranked: Vec<(HeadIndex, f64)> = entropy.heads().collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let heads: Vec<HeadIndex> = ranked.into_iter().take(k).map(|(h, _)| h).collect();
    Circuit::from_heads(&heads, CircuitMethod::AttentionEntropy)
}

/// `k` heads drawn uniformly without replacement; deterministic per seed.
pub fn random_circuit(config: &ModelConfig, seed: u64, k: usize) -> Result<Circuit> {
    let total = config.total_heads();
    if k > total {
        return Err(Error::TooManyHeads { k, available: total });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let heads: Vec<HeadIndex> = rand::seq::index::sample(&mut rng, total, k)
        .into_iter()
        .map(|i| HeadIndex::new(i / config.n_heads, i % config.n_heads))
        .collect();
    Circuit::from_heads(&heads, CircuitMethod::Random)
}

/// Clean-run quantities of one example that every circuit evaluation reuses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanRunSummary {
    pub example_id: usize,
    pub ld_clean: f32,
    pub confidence: f64,
    pub contributions: HeadMatrix,
}

impl CleanRunSummary {
    pub fn new(weights: &WeightStore, example: &IoiExample, cache: &ActivationCache, logits: &[f32]) -> Self {
        Self {
            example_id: example.id,
            ld_clean: logit_diff(logits, example.io_id, example.s_id),
            confidence: confidence(logits),
            contributions: HeadMatrix::from_array(&crate::model::all_head_contributions(
                weights,
                cache,
                example.io_id,
                example.s_id,
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleFaithfulness {
    pub example_id: usize,
    pub ld_clean: f32,
    pub ld_ablated: f32,
    pub sufficiency: Clamped,
    pub comprehensiveness: Clamped,
    pub f1: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub n: usize,
    pub sufficiency_mean: f64,
    pub sufficiency_std: f64,
    pub comprehensiveness_mean: f64,
    pub comprehensiveness_std: f64,
    /// Harmonic mean of the two mean metrics (the headline F1).
    pub f1: f64,
    /// Mean of per-example F1 scores.
    pub f1_per_example_mean: f64,
    pub confidence_mean: f64,
    /// Confidence vs comprehensiveness; `None` when undefined.
    pub confidence_comprehensiveness_r: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaithfulnessReport {
    pub method: CircuitMethod,
    pub circuit: Vec<HeadIndex>,
    pub ablation_mode: AblationMode,
    pub examples: Vec<ExampleFaithfulness>,
    pub excluded: Vec<Exclusion>,
    pub aggregates: Aggregates,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl Aggregates {
    pub fn from_examples(examples: &[ExampleFaithfulness]) -> Self {
        let col = |f: fn(&ExampleFaithfulness) -> f64| examples.iter().map(f).collect::<Vec<f64>>();
        let suff = col(|e| e.sufficiency.value);
        let comp = col(|e| e.comprehensiveness.value);
        let conf = col(|e| e.confidence);
        let (sufficiency_mean, sufficiency_std) = mean_std(&suff);
        let (comprehensiveness_mean, comprehensiveness_std) = mean_std(&comp);
        Self {
            n: examples.len(),
            sufficiency_mean,
            sufficiency_std,
            comprehensiveness_mean,
            comprehensiveness_std,
            f1: f1(sufficiency_mean, comprehensiveness_mean),
            f1_per_example_mean: mean_std(&col(|e| e.f1)).0,
            confidence_mean: mean_std(&conf).0,
            confidence_comprehensiveness_r: pearson_r(&conf, &comp).ok(),
        }
    }
}

/// Scores `circuit` on every example. Incorrectly predicted examples are excluded.
pub fn evaluate_circuit(
    weights: &WeightStore,
    dataset: &[IoiExample],
    clean: &[CleanRunSummary],
    circuit: &Circuit,
    mode: AblationMode,
    means: Option<&MeanActivations>,
) -> Result<FaithfulnessReport> {
    if dataset.len() != clean.len() {
        return Err(Error::Dataset("clean-run summaries do not match the dataset".into()));
    }
    let heads = circuit.heads();
    let rows: Vec<Result<std::result::Result<ExampleFaithfulness, Exclusion>>> = dataset
        .par_iter()
        .zip(clean.par_iter())
        .map(|(example, summary)| {
            if let Err(e) = require_correct(example.id, summary.ld_clean) {
                return Ok(Err(Exclusion {
                    example_id: example.id,
                    reason: e.to_string(),
                }));
            }
            let ld_ablated = if heads.is_empty() {
                summary.ld_clean
            } else {
                ablate_heads(weights, example, &heads, mode, means)?
            };
            let suff = sufficiency(example.id, summary.ld_clean, &heads, &summary.contributions)?;
            let comp = comprehensiveness(example.id, summary.ld_clean, ld_ablated)?;
            Ok(Ok(ExampleFaithfulness {
                example_id: example.id,
                ld_clean: summary.ld_clean,
                ld_ablated,
                sufficiency: suff,
                comprehensiveness: comp,
                f1: f1(suff.value, comp.value),
                confidence: summary.confidence,
            }))
        })
        .collect();
    let mut examples = Vec::new();
    let mut excluded = Vec::new();
    for r in rows {
        match r? {
            Ok(e) => examples.push(e),
            Err(x) => excluded.push(x),
        }
    }
    Ok(FaithfulnessReport {
        method: circuit.provenance,
        circuit: heads,
        ablation_mode: mode,
        aggregates: Aggregates::from_examples(&examples),
        examples,
        excluded,
    })
}

impl FaithfulnessReport {
    /// Per-example rows as CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "example_id,ld_clean,ld_ablated,sufficiency,sufficiency_raw,comprehensiveness,comprehensiveness_raw,f1,confidence\n",
        );
        for e in &self.examples {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                e.example_id,
                e.ld_clean,
                e.ld_ablated,
                e.sufficiency.value,
                e.sufficiency.raw,
                e.comprehensiveness.value,
                e.comprehensiveness.raw,
                e.f1,
                e.confidence
            ));
        }
        out
    }
}
