// SPDX-License-Identifier: MIT OR Apache-2.0
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use headlens::dataset::IoiExample;
use headlens::{load_weights, ModelConfig, TokenId, WeightStore};

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        n_heads: 4,
        d_model: 32,
        d_head: 8,
        d_mlp: 128,
        vocab_size: 96,
        max_context: 32,
        layernorm_epsilon: 1e-5,
    }
}

pub fn tiny_weights() -> WeightStore {
    load_weights(&data_dir().join("tiny_gpt2.safetensors"), &tiny_config()).expect("tiny fixture loads")
}

/// A synthetic IOI-shaped example over the tiny vocabulary.
///
/// Layout: `[bos, io, x, s, y, z, s, w, q]`, corrupt repeats `io` at the second S slot.
pub fn synthetic_example(id: usize, template_id: usize, io: TokenId, s: TokenId, filler: [TokenId; 5]) -> IoiExample {
    let [a, b, c, d, e] = filler;
    let clean = vec![a, io, b, s, c, d, s, e, a];
    let mut corrupt = clean.clone();
    corrupt[6] = io;
    IoiExample {
        id,
        template_id,
        name_pair_id: id,
        io_name: format!("t{io}"),
        s_name: format!("t{s}"),
        clean_prompt: String::new(),
        corrupt_prompt: String::new(),
        clean_tokens: clean,
        corrupt_tokens: corrupt,
        io_id: io,
        s_id: s,
        io_pos: 1,
        s1_pos: 3,
        s2_pos: 6,
    }
}

pub fn synthetic_dataset(n: usize, vocab: u32) -> Vec<IoiExample> {
    (0..n)
        .map(|i| {
            let i32_ = i as u32;
            let io = 10 + (i32_ * 7) % (vocab - 20);
            let s = 10 + (i32_ * 7 + 3) % (vocab - 20);
            let f = |k: u32| (i32_ * 13 + k * 5) % 10;
            synthetic_example(i, i % 2, io, s, [f(0), f(1), f(2), f(3), f(4)])
        })
        .collect()
}

pub fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}
