// SPDX-License-Identifier: MIT OR Apache-2.0

//! Instrumented GPT-2 forward pass.
//!
//! Every pass records per-head attention patterns, per-head outputs `z`
//! (before the output projection) and the residual stream around each block.
//! Interventions overwrite `z` of selected heads before the output projection,
//! so every downstream layer norm and block sees the edit.

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, Axis, Zip};

use crate::error::{Error, Result};
use crate::model::{HeadIndex, WeightStore};

pub type TokenId = u32;

/// Sequence positions an intervention applies to.
#[derive(Debug, Clone, PartialEq)]
pub enum Positions {
    All,
    Explicit(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum InterventionAction {
    /// Exact replacement, `[|positions| x d_head]`.
    ReplaceWith(Array2<f32>),
    Zero,
    /// Mean activation, either one row broadcast to every position or one row per position.
    MeanSubstitute(Array2<f32>),
}

/// A declarative edit of one head's output during a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Intervention {
    pub target: HeadIndex,
    pub positions: Positions,
    pub action: InterventionAction,
}

impl Intervention {
    pub fn replace_all(target: HeadIndex, z: Array2<f32>) -> Self {
        Self {
            target,
            positions: Positions::All,
            action: InterventionAction::ReplaceWith(z),
        }
    }

    pub fn zero(target: HeadIndex) -> Self {
        Self {
            target,
            positions: Positions::All,
            action: InterventionAction::Zero,
        }
    }

    pub fn mean_substitute(target: HeadIndex, mean: Array2<f32>) -> Self {
        Self {
            target,
            positions: Positions::All,
            action: InterventionAction::MeanSubstitute(mean),
        }
    }

    fn resolved_positions(&self, seq: usize) -> Vec<usize> {
        match &self.positions {
            Positions::All => (0..seq).collect(),
            Positions::Explicit(p) => p.clone(),
        }
    }

    fn validate(&self, weights: &WeightStore, seq: usize) -> Result<()> {
        let cfg = weights.config();
        self.target.check(cfg)?;
        let bad = |reason: String| Error::InvalidIntervention {
            head: self.target,
            reason,
        };
        let positions = self.resolved_positions(seq);
        if let Some(p) = positions.iter().find(|&&p| p >= seq) {
            return Err(bad(format!("position {p} outside sequence of {seq}")));
        }
        let check_cols = |m: &Array2<f32>| {
            if m.ncols() != cfg.d_head {
                Err(bad(format!("expected {} columns, found {}", cfg.d_head, m.ncols())))
            } else {
                Ok(())
            }
        };
        match &self.action {
            InterventionAction::ReplaceWith(m) => {
                check_cols(m)?;
                if m.nrows() != positions.len() {
                    return Err(bad(format!(
                        "replacement has {} rows for {} positions",
                        m.nrows(),
                        positions.len()
                    )));
                }
            }
            InterventionAction::MeanSubstitute(m) => {
                check_cols(m)?;
                if m.nrows() != 1 && m.nrows() != positions.len() {
                    return Err(bad(format!(
                        "mean has {} rows; expected 1 or {}",
                        m.nrows(),
                        positions.len()
                    )));
                }
            }
            InterventionAction::Zero => {}
        }
        Ok(())
    }

    fn apply(&self, z: &mut Array3<f32>) {
        let positions = self.resolved_positions(z.shape()[0]);
        let head = self.target.head;
        for (row, &pos) in positions.iter().enumerate() {
            let mut dst = z.slice_mut(s![pos, head, ..]);
            match &self.action {
                InterventionAction::Zero => dst.fill(0.0),
                InterventionAction::ReplaceWith(m) => dst.assign(&m.row(row)),
                InterventionAction::MeanSubstitute(m) => {
                    let r = if m.nrows() == 1 { 0 } else { row };
                    dst.assign(&m.row(r));
                }
            }
        }
    }
}

/// Activations recorded for one transformer block.
#[derive(Debug, Clone)]
pub struct LayerCache {
    pattern: Array3<f32>,
    z: Array3<f32>,
    resid_pre: Array2<f32>,
    resid_mid: Array2<f32>,
    resid_post: Array2<f32>,
}

/// Everything recorded by one forward pass. Read-only once returned.
#[derive(Debug, Clone)]
pub struct ActivationCache {
    layers: Vec<LayerCache>,
    logits: Array2<f32>,
}

impl ActivationCache {
    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn seq_len(&self) -> usize {
        self.logits.nrows()
    }

    /// Post-softmax attention, `[n_heads, seq, seq]` indexed `[head, query, key]`.
    pub fn pattern(&self, layer: usize) -> ArrayView3<'_, f32> {
        self.layers[layer].pattern.view()
    }

    /// Attention row of `head` at query position `query`.
    pub fn attention_row(&self, head: HeadIndex, query: usize) -> ArrayView1<'_, f32> {
        self.layers[head.layer].pattern.slice(s![head.head, query, ..])
    }

    /// Per-head outputs before the output projection, `[seq, n_heads, d_head]`.
    pub fn z(&self, layer: usize) -> ArrayView3<'_, f32> {
        self.layers[layer].z.view()
    }

    /// `z` of a single head, `[seq, d_head]`.
    pub fn head_z(&self, head: HeadIndex) -> ArrayView2<'_, f32> {
        self.layers[head.layer].z.slice(s![.., head.head, ..])
    }

    pub fn resid_pre(&self, layer: usize) -> ArrayView2<'_, f32> {
        self.layers[layer].resid_pre.view()
    }

    /// Residual after the attention sublayer of `layer`.
    pub fn resid_mid(&self, layer: usize) -> ArrayView2<'_, f32> {
        self.layers[layer].resid_mid.view()
    }

    pub fn resid_post(&self, layer: usize) -> ArrayView2<'_, f32> {
        self.layers[layer].resid_post.view()
    }

    /// Input to the final layer norm, `[seq, d_model]`.
    pub fn final_norm_input(&self) -> ArrayView2<'_, f32> {
        self.layers.last().expect("at least one layer").resid_post.view()
    }

    /// Logits at every position, `[seq, vocab_size]`.
    pub fn logits(&self) -> ArrayView2<'_, f32> {
        self.logits.view()
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Logits at the final position.
    pub logits: Vec<f32>,
    pub cache: ActivationCache,
}

pub(crate) fn layer_norm(x: &Array2<f32>, scale: &Array1<f32>, bias: &Array1<f32>, eps: f32) -> Array2<f32> {
    let mut out = x.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let n = row.len() as f32;
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
        let inv = 1.0 / (var + eps).sqrt();
        Zip::from(&mut row)
            .and(scale)
            .and(bias)
            .for_each(|v, &g, &b| *v = (*v - mean) * inv * g + b);
    }
    out
}

fn gelu_new(x: f32) -> f32 {
    const C: f32 = 0.797_884_6; // sqrt(2 / pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

fn check_tokens(weights: &WeightStore, tokens: &[TokenId]) -> Result<()> {
    let cfg = weights.config();
    if tokens.is_empty() {
        return Err(Error::EmptySequence);
    }
    if tokens.len() > cfg.max_context {
        return Err(Error::SequenceTooLong {
            len: tokens.len(),
            max: cfg.max_context,
        });
    }
    if let Some(&id) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
        return Err(Error::TokenOutOfRange {
            id,
            vocab_size: cfg.vocab_size,
        });
    }
    Ok(())
}

fn embed(weights: &WeightStore, tokens: &[TokenId]) -> Array2<f32> {
    let d = weights.config().d_model;
    let mut x = Array2::zeros((tokens.len(), d));
    for (pos, &tok) in tokens.iter().enumerate() {
        let mut row = x.row_mut(pos);
        row.assign(&weights.wte.row(tok as usize));
        row += &weights.wpe.row(pos);
    }
    x
}

/// Runs blocks `start_layer..` on residual `x`, returning the final-norm input.
fn run_blocks(
    weights: &WeightStore,
    mut x: Array2<f32>,
    start_layer: usize,
    interventions: &[Intervention],
    mut record: Option<&mut Vec<LayerCache>>,
) -> Array2<f32> {
    let cfg = weights.config();
    let (seq, d, dh, n_heads) = (x.nrows(), cfg.d_model, cfg.d_head, cfg.n_heads);
    let scale = 1.0 / (dh as f32).sqrt();
    let eps = cfg.layernorm_epsilon;

    for (layer_idx, lw) in weights.layers.iter().enumerate().skip(start_layer) {
        let resid_pre = record.as_ref().map(|_| x.clone());

        let h = layer_norm(&x, &lw.ln1_scale, &lw.ln1_bias, eps);
        let qkv = h.dot(&lw.w_qkv) + &lw.b_qkv;
        let mut z = Array3::<f32>::zeros((seq, n_heads, dh));
        let mut pattern = Array3::<f32>::zeros((n_heads, seq, seq));
        for head in 0..n_heads {
            let q = qkv.slice(s![.., head * dh..(head + 1) * dh]);
            let k = qkv.slice(s![.., d + head * dh..d + (head + 1) * dh]);
            let v = qkv.slice(s![.., 2 * d + head * dh..2 * d + (head + 1) * dh]);
            let mut scores = q.dot(&k.t());
            for (qi, mut row) in scores.axis_iter_mut(Axis(0)).enumerate() {
                let visible = row.slice(s![..=qi]);
                let max = visible.fold(f32::NEG_INFINITY, |m, &v| m.max(v * scale));
                let mut total = 0.0f32;
                for (ki, val) in row.iter_mut().enumerate() {
                    if ki <= qi {
                        *val = (*val * scale - max).exp();
                        total += *val;
                    } else {
                        *val = 0.0;
                    }
                }
                row.mapv_inplace(|v| v / total);
            }
            z.slice_mut(s![.., head, ..]).assign(&scores.dot(&v));
            pattern.slice_mut(s![head, .., ..]).assign(&scores);
        }

        for iv in interventions.iter().filter(|iv| iv.target.layer == layer_idx) {
            iv.apply(&mut z);
        }

        let z_flat = z.view().into_shape_with_order((seq, d)).expect("contiguous z");
        let attn_out = z_flat.dot(&lw.w_out) + &lw.b_out;
        x += &attn_out;
        let resid_mid = record.as_ref().map(|_| x.clone());

        let h2 = layer_norm(&x, &lw.ln2_scale, &lw.ln2_bias, eps);
        let mut hidden = h2.dot(&lw.w_fc) + &lw.b_fc;
        hidden.mapv_inplace(gelu_new);
        x += &(hidden.dot(&lw.w_proj) + &lw.b_proj);

        if let Some(rec) = record.as_deref_mut() {
            rec.push(LayerCache {
                pattern,
                z,
                resid_pre: resid_pre.expect("recording"),
                resid_mid: resid_mid.expect("recording"),
                resid_post: x.clone(),
            });
        }
    }
    x
}

fn final_position_logits(weights: &WeightStore, resid: &Array2<f32>) -> Vec<f32> {
    let last = resid.slice(s![resid.nrows() - 1..resid.nrows(), ..]).to_owned();
    let normed = layer_norm(
        &last,
        &weights.lnf_scale,
        &weights.lnf_bias,
        weights.config().layernorm_epsilon,
    );
    weights.wte.dot(&normed.row(0)).to_vec()
}

fn validate_interventions(weights: &WeightStore, seq: usize, interventions: &[Intervention]) -> Result<()> {
    interventions.iter().try_for_each(|iv| iv.validate(weights, seq))
}

/// Full instrumented forward pass.
pub fn forward(weights: &WeightStore, tokens: &[TokenId], interventions: &[Intervention]) -> Result<ForwardOutput> {
    check_tokens(weights, tokens)?;
    validate_interventions(weights, tokens.len(), interventions)?;
    let mut layers = Vec::with_capacity(weights.config().n_layers);
    let resid = run_blocks(weights, embed(weights, tokens), 0, interventions, Some(&mut layers));
    let normed = layer_norm(
        &resid,
        &weights.lnf_scale,
        &weights.lnf_bias,
        weights.config().layernorm_epsilon,
    );
    let all_logits = normed.dot(&weights.wte.t());
    let logits = all_logits.row(all_logits.nrows() - 1).to_vec();
    Ok(ForwardOutput {
        logits,
        cache: ActivationCache {
            layers,
            logits: all_logits,
        },
    })
}

/// Final-position logits without recording a cache.
pub fn final_logits(weights: &WeightStore, tokens: &[TokenId], interventions: &[Intervention]) -> Result<Vec<f32>> {
    check_tokens(weights, tokens)?;
    validate_interventions(weights, tokens.len(), interventions)?;
    let resid = run_blocks(weights, embed(weights, tokens), 0, interventions, None);
    Ok(final_position_logits(weights, &resid))
}

/// Re-runs a cached pass from `start_layer` onward with `interventions` applied.
///
/// Identical to a fresh [`final_logits`] call on the same tokens, provided no
/// intervention targets a layer below `start_layer`.
pub fn resume_final_logits(
    weights: &WeightStore,
    base: &ActivationCache,
    start_layer: usize,
    interventions: &[Intervention],
) -> Result<Vec<f32>> {
    if start_layer >= base.n_layers() {
        return Err(Error::InvalidConfig(format!(
            "cannot resume at layer {start_layer} of {}",
            base.n_layers()
        )));
    }
    validate_interventions(weights, base.seq_len(), interventions)?;
    if let Some(iv) = interventions.iter().find(|iv| iv.target.layer < start_layer) {
        return Err(Error::InvalidIntervention {
            head: iv.target,
            reason: format!("targets a layer before resume layer {start_layer}"),
        });
    }
    let x = base.resid_pre(start_layer).to_owned();
    let resid = run_blocks(weights, x, start_layer, interventions, None);
    Ok(final_position_logits(weights, &resid))
}
