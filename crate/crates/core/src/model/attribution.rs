// SPDX-License-Identifier: MIT OR Apache-2.0

//! Direct logit attribution through a frozen final layer norm.
//!
//! The final layer norm is linearised around the cached run: its centring and
//! its scale `1/sigma` are taken from that run's final-position residual, so
//! the logit difference splits exactly into per-component terms.

use ndarray::{s, Array1, Array2, ArrayView1};

use crate::error::Result;
use crate::model::{ActivationCache, HeadIndex, TokenId, WeightStore};

/// Per-component share of `logit(io) - logit(s)` at the final position.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitDecomposition {
    /// Token plus positional embedding.
    pub embed: f64,
    /// `[n_layers x n_heads]` direct contributions of each head.
    pub heads: Array2<f64>,
    /// Output-projection bias of each attention layer.
    pub attn_bias: Vec<f64>,
    pub mlp: Vec<f64>,
    /// Final layer-norm bias term.
    pub final_bias: f64,
}

impl LogitDecomposition {
    pub fn head(&self, head: HeadIndex) -> f64 {
        self.heads[[head.layer, head.head]]
    }

    pub fn total(&self) -> f64 {
        self.embed
            + self.heads.sum()
            + self.attn_bias.iter().sum::<f64>()
            + self.mlp.iter().sum::<f64>()
            + self.final_bias
    }
}

/// The frozen final-norm readout `gamma * (u_io - u_s) / sigma`, pre-centred.
struct Readout {
    direction: Array1<f64>,
}

impl Readout {
    fn new(weights: &WeightStore, cache: &ActivationCache, io: TokenId, s: TokenId) -> Self {
        let resid = cache.final_norm_input();
        let last = resid.row(resid.nrows() - 1);
        let n = last.len() as f64;
        let mean = last.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = last.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let sigma = (var + weights.config().layernorm_epsilon as f64).sqrt();
        let du = &weights.unembed_row(io).mapv(f64::from) - &weights.unembed_row(s).mapv(f64::from);
        let mut direction = &weights.lnf_scale.mapv(f64::from) * &du / sigma;
        // Centring is linear: (c - mean(c)) . d == c . (d - mean(d)).
        let dmean = direction.mean().unwrap_or(0.0);
        direction.mapv_inplace(|v| v - dmean);
        Self { direction }
    }

    fn project(&self, v: ArrayView1<'_, f32>) -> f64 {
        v.iter().zip(&self.direction).map(|(&a, &b)| a as f64 * b).sum()
    }
}

fn head_output_at(weights: &WeightStore, cache: &ActivationCache, head: HeadIndex, pos: usize) -> Array1<f32> {
    let z = cache.head_z(head);
    z.row(pos).dot(&weights.head_out_proj(head.layer, head.head))
}

/// Decomposes the final-position logit difference over every component.
pub fn logit_decomposition(
    weights: &WeightStore,
    cache: &ActivationCache,
    io: TokenId,
    s: TokenId,
) -> Result<LogitDecomposition> {
    let cfg = weights.config();
    let readout = Readout::new(weights, cache, io, s);
    let last = cache.seq_len() - 1;

    let embed = readout.project(cache.resid_pre(0).row(last));
    let mut heads = Array2::zeros((cfg.n_layers, cfg.n_heads));
    for h in HeadIndex::all(cfg) {
        heads[[h.layer, h.head]] = readout.project(head_output_at(weights, cache, h, last).view());
    }
    let attn_bias = weights.layers.iter().map(|l| readout.project(l.b_out.view())).collect();
    let mlp = (0..cfg.n_layers)
        .map(|layer| {
            let delta = &cache.resid_post(layer).slice(s![last, ..]) - &cache.resid_mid(layer).slice(s![last, ..]);
            readout.project(delta.view())
        })
        .collect();
    let du = &weights.unembed_row(io) - &weights.unembed_row(s);
    let final_bias = weights
        .lnf_bias
        .iter()
        .zip(&du)
        .map(|(&b, &u)| b as f64 * u as f64)
        .sum();

    Ok(LogitDecomposition {
        embed,
        heads,
        attn_bias,
        mlp,
        final_bias,
    })
}

/// Direct contribution of one head to `logit(io) - logit(s)` at the final position.
pub fn head_logit_contribution(
    weights: &WeightStore,
    cache: &ActivationCache,
    head: HeadIndex,
    io: TokenId,
    s: TokenId,
) -> Result<f64> {
    head.check(weights.config())?;
    let readout = Readout::new(weights, cache, io, s);
    let last = cache.seq_len() - 1;
    Ok(readout.project(head_output_at(weights, cache, head, last).view()))
}

/// Direct contributions of every head, `[n_layers x n_heads]`.
pub fn all_head_contributions(weights: &WeightStore, cache: &ActivationCache, io: TokenId, s: TokenId) -> Array2<f64> {
    let cfg = weights.config();
    let readout = Readout::new(weights, cache, io, s);
    let last = cache.seq_len() - 1;
    let mut out = Array2::zeros((cfg.n_layers, cfg.n_heads));
    for h in HeadIndex::all(cfg) {
        out[[h.layer, h.head]] = readout.project(head_output_at(weights, cache, h, last).view());
    }
    out
}
