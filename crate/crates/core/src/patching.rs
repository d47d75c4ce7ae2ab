// SPDX-License-Identifier: MIT OR Apache-2.0

//! Activation patching over an IOI dataset.
//!
//! Effect recovery patches one head's clean-run output into the corrupted run
//! (at every position) and measures how much of the clean/corrupt logit
//! difference gap is restored:
//! `(LD_patched - LD_corrupt) / (LD_clean - LD_corrupt)`.

use std::collections::BTreeMap;

use ndarray::{s, Array3, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::IoiExample;
use crate::error::{Error, Result};
use crate::model::{
    all_head_contributions, final_logits, forward, resume_final_logits, ForwardOutput, HeadIndex, Intervention,
    ModelConfig, TokenId, WeightStore,
};

/// Effects with `|LD_clean - LD_corrupt|` below this are undefined.
pub const DEGENERATE_THRESHOLD: f32 = 1e-6;

/// A real value per attention head, `[n_layers x n_heads]`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadMatrix {
    pub n_layers: usize,
    pub n_heads: usize,
    pub values: Vec<f64>,
}

impl HeadMatrix {
    pub fn zeros(n_layers: usize, n_heads: usize) -> Self {
        Self {
            n_layers,
            n_heads,
            values: vec![0.0; n_layers * n_heads],
        }
    }

    pub fn for_config(config: &ModelConfig) -> Self {
        Self::zeros(config.n_layers, config.n_heads)
    }

    pub fn from_array(a: &ndarray::Array2<f64>) -> Self {
        Self {
            n_layers: a.nrows(),
            n_heads: a.ncols(),
            values: a.iter().copied().collect(),
        }
    }

    pub fn get(&self, head: HeadIndex) -> f64 {
        self.values[head.flat(self.n_heads)]
    }

    pub fn set(&mut self, head: HeadIndex, value: f64) {
        let i = head.flat(self.n_heads);
        self.values[i] = value;
    }

    pub fn heads(&self) -> impl Iterator<Item = (HeadIndex, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(|(i, &v)| (HeadIndex::new(i / self.n_heads, i % self.n_heads), v))
    }

    /// Heads sorted by value, descending; ties by `(layer, head)` ascending.
    pub fn ranked(&self) -> Vec<(HeadIndex, f64)> {
        let mut all: Vec<_> = self.heads().collect();
        all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        all
    }

    pub fn mean_of(matrices: &[&HeadMatrix]) -> Option<Self> {
        let first = matrices.first()?;
        let mut out = Self::zeros(first.n_layers, first.n_heads);
        for m in matrices {
            for (o, v) in out.values.iter_mut().zip(&m.values) {
                *o += v;
            }
        }
        let n = matrices.len() as f64;
        out.values.iter_mut().for_each(|v| *v /= n);
        Some(out)
    }

    /// CSV with one row per layer and one column per head.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer");
        for h in 0..self.n_heads {
            out.push_str(&format!(",H{h}"));
        }
        out.push('\n');
        for l in 0..self.n_layers {
            out.push_str(&format!("L{l}"));
            for h in 0..self.n_heads {
                out.push_str(&format!(",{}", self.values[l * self.n_heads + h]));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Dataset(format!("head matrix CSV: {m}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| bad("empty"))?;
        let n_heads = header.split(',').count().saturating_sub(1);
        let mut values = Vec::new();
        let mut n_layers = 0;
        for line in lines {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != n_heads + 1 {
                return Err(bad("ragged row"));
            }
            for c in &cells[1..] {
                values.push(c.trim().parse::<f64>().map_err(|_| bad("non-numeric cell"))?);
            }
            n_layers += 1;
        }
        Ok(Self {
            n_layers,
            n_heads,
            values,
        })
    }
}

/// `logit(io) - logit(s)`.
pub fn logit_diff(logits: &[f32], io: TokenId, s: TokenId) -> f32 {
    logits[io as usize] - logits[s as usize]
}

/// Clean and corrupted forward passes of one example.
#[derive(Debug, Clone)]
pub struct ExampleRuns {
    pub clean: ForwardOutput,
    pub corrupt: ForwardOutput,
    pub ld_clean: f32,
    pub ld_corrupt: f32,
}

impl ExampleRuns {
    pub fn new(weights: &WeightStore, example: &IoiExample) -> Result<Self> {
        let clean = forward(weights, &example.clean_tokens, &[])?;
        let corrupt = forward(weights, &example.corrupt_tokens, &[])?;
        let ld_clean = logit_diff(&clean.logits, example.io_id, example.s_id);
        let ld_corrupt = logit_diff(&corrupt.logits, example.io_id, example.s_id);
        Ok(Self {
            clean,
            corrupt,
            ld_clean,
            ld_corrupt,
        })
    }

    fn gap(&self, example_id: usize) -> Result<f32> {
        let gap = self.ld_clean - self.ld_corrupt;
        if gap.abs() < DEGENERATE_THRESHOLD || !gap.is_finite() {
            return Err(Error::DegenerateExample { example_id, gap });
        }
        Ok(gap)
    }
}

/// Logit difference of the corrupted run with `head`'s output taken from the clean run.
pub fn patched_logit_diff(
    weights: &WeightStore,
    example: &IoiExample,
    runs: &ExampleRuns,
    head: HeadIndex,
) -> Result<f32> {
    let z = runs.clean.cache.head_z(head).to_owned();
    let logits = resume_final_logits(
        weights,
        &runs.corrupt.cache,
        head.layer,
        &[Intervention::replace_all(head, z)],
    )?;
    Ok(logit_diff(&logits, example.io_id, example.s_id))
}

/// Fraction of the clean/corrupt gap recovered by patching `head`. Not clamped.
pub fn effect_recovery(
    weights: &WeightStore,
    example: &IoiExample,
    runs: &ExampleRuns,
    head: HeadIndex,
) -> Result<f32> {
    head.check(weights.config())?;
    let gap = runs.gap(example.id)?;
    let patched = patched_logit_diff(weights, example, runs, head)?;
    Ok((patched - runs.ld_corrupt) / gap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchingResult {
    pub example_id: usize,
    pub ld_clean: f32,
    pub ld_corrupt: f32,
    /// Effect recovery per head (dimensionless).
    pub effect: HeadMatrix,
    /// Direct logit contribution per head in the clean run (logit units).
    pub contribution: HeadMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub example_id: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutput {
    pub results: Vec<PatchingResult>,
    pub mean_effect: HeadMatrix,
    pub excluded: Vec<Exclusion>,
}

/// Patches every head on every example (in parallel) and averages the effects.
pub fn run_patching_sweep(weights: &WeightStore, dataset: &[IoiExample]) -> Result<SweepOutput> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let cfg = weights.config();
    let heads: Vec<HeadIndex> = HeadIndex::all(cfg).collect();

    let per_example: Vec<Result<std::result::Result<PatchingResult, Exclusion>>> = dataset
        .par_iter()
        .map(|example| {
            let runs = ExampleRuns::new(weights, example)?;
            match runs.gap(example.id) {
                Err(e @ Error::DegenerateExample { .. }) => {
                    return Ok(Err(Exclusion {
                        example_id: example.id,
                        reason: e.to_string(),
                    }))
                }
                Err(e) => return Err(e),
                Ok(_) => {}
            }
            let effects = heads
                .par_iter()
                .map(|&h| effect_recovery(weights, example, &runs, h))
                .collect::<Result<Vec<f32>>>()?;
            let mut effect = HeadMatrix::for_config(cfg);
            for (&h, &e) in heads.iter().zip(&effects) {
                effect.set(h, e as f64);
            }
            let contribution = HeadMatrix::from_array(&all_head_contributions(
                weights,
                &runs.clean.cache,
                example.io_id,
                example.s_id,
            ));
            Ok(Ok(PatchingResult {
                example_id: example.id,
                ld_clean: runs.ld_clean,
                ld_corrupt: runs.ld_corrupt,
                effect,
                contribution,
            }))
        })
        .collect();

    let mut results = Vec::new();
    let mut excluded = Vec::new();
    for r in per_example {
        match r? {
            Ok(res) => results.push(res),
            Err(ex) => excluded.push(ex),
        }
    }
    if !excluded.is_empty() {
        log::warn!(
            "{} of {} examples excluded as degenerate",
            excluded.len(),
            dataset.len()
        );
    }
    let effects: Vec<&HeadMatrix> = results.iter().map(|r| &r.effect).collect();
    let mean_effect =
        HeadMatrix::mean_of(&effects).ok_or_else(|| Error::Dataset("every example was degenerate".into()))?;
    Ok(SweepOutput {
        results,
        mean_effect,
        excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AblationMode {
    Zero,
    #[default]
    MeanSubstitute,
}

impl std::fmt::Display for AblationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AblationMode::Zero => "zero",
            AblationMode::MeanSubstitute => "mean-substitute",
        })
    }
}

impl std::str::FromStr for AblationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(Self::Zero),
            "mean" | "mean-substitute" => Ok(Self::MeanSubstitute),
            other => Err(Error::Config(format!("unknown ablation mode `{other}`"))),
        }
    }
}

/// Clean-run head outputs averaged per absolute position, one table per template.
#[derive(Debug, Clone)]
pub struct MeanActivations {
    /// template id -> per layer `[seq, n_heads, d_head]`.
    by_template: BTreeMap<usize, Vec<Array3<f32>>>,
}

impl MeanActivations {
    pub fn compute(weights: &WeightStore, dataset: &[IoiExample]) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let caches = dataset
            .par_iter()
            .map(|ex| forward(weights, &ex.clean_tokens, &[]).map(|o| (ex.template_id, o.cache)))
            .collect::<Result<Vec<_>>>()?;
        let mut sums: BTreeMap<usize, (Vec<Array3<f64>>, usize)> = BTreeMap::new();
        for (template, cache) in &caches {
            let entry = sums.entry(*template).or_insert_with(|| {
                let shape = cache.z(0).dim();
                ((0..cache.n_layers()).map(|_| Array3::zeros(shape)).collect(), 0)
            });
            if entry.0[0].dim() != cache.z(0).dim() {
                return Err(Error::Dataset(format!(
                    "template {template} has prompts of different token lengths"
                )));
            }
            for (layer, acc) in entry.0.iter_mut().enumerate() {
                acc.zip_mut_with(&cache.z(layer), |a, &z| *a += z as f64);
            }
            entry.1 += 1;
        }
        let by_template = sums
            .into_iter()
            .map(|(t, (layers, n))| {
                (
                    t,
                    layers.into_iter().map(|a| a.mapv(|v| (v / n as f64) as f32)).collect(),
                )
            })
            .collect();
        Ok(Self { by_template })
    }

    /// Mean `z` of `head` for prompts of `template_id`, `[seq, d_head]`.
    pub fn head_mean(&self, template_id: usize, head: HeadIndex) -> Option<ArrayView2<'_, f32>> {
        self.by_template
            .get(&template_id)
            .and_then(|layers| layers.get(head.layer))
            .map(|z| z.slice(s![.., head.head, ..]))
    }
}

/// Mean clean-run output of one head, per template class.
pub fn mean_head_z(
    weights: &WeightStore,
    dataset: &[IoiExample],
    head: HeadIndex,
) -> Result<BTreeMap<usize, ndarray::Array2<f32>>> {
    head.check(weights.config())?;
    let means = MeanActivations::compute(weights, dataset)?;
    Ok(means
        .by_template
        .keys()
        .map(|&t| (t, means.head_mean(t, head).expect("present").to_owned()))
        .collect())
}

/// Interventions that ablate `heads` on prompts of `example`'s template.
pub fn ablation_interventions(
    example: &IoiExample,
    heads: &[HeadIndex],
    mode: AblationMode,
    means: Option<&MeanActivations>,
) -> Result<Vec<Intervention>> {
    heads
        .iter()
        .map(|&h| match mode {
            AblationMode::Zero => Ok(Intervention::zero(h)),
            AblationMode::MeanSubstitute => {
                let means = means.ok_or_else(|| Error::Config("mean ablation requires precomputed means".into()))?;
                let mean = means.head_mean(example.template_id, h).ok_or_else(|| {
                    Error::Dataset(format!("no mean activations for template {}", example.template_id))
                })?;
                if mean.nrows() != example.clean_tokens.len() {
                    return Err(Error::Dataset(format!(
                        "mean activations cover {} positions, example {} has {}",
                        mean.nrows(),
                        example.id,
                        example.clean_tokens.len()
                    )));
                }
                Ok(Intervention::mean_substitute(h, mean.to_owned()))
            }
        })
        .collect()
}

/// Logit difference of the clean prompt with every head in `heads` ablated.
pub fn ablate_heads(
    weights: &WeightStore,
    example: &IoiExample,
    heads: &[HeadIndex],
    mode: AblationMode,
    means: Option<&MeanActivations>,
) -> Result<f32> {
    if heads.is_empty() {
        log::warn!(
            "ablating an empty head set on example {}; returning LD_clean",
            example.id
        );
    }
    let interventions = ablation_interventions(example, heads, mode, means)?;
    let logits = final_logits(weights, &example.clean_tokens, &interventions)?;
    Ok(logit_diff(&logits, example.io_id, example.s_id))
}
