// SPDX-License-Identifier: MIT OR Apache-2.0

//! Fixtures shared by the benchmarks.

use headlens::dataset::IoiExample;
use headlens::{ModelConfig, TokenId, WeightStore};

/// GPT-2 Small geometry with fewer layers and a small vocabulary.
pub fn bench_config(n_layers: usize) -> ModelConfig {
    ModelConfig {
        n_layers,
        n_heads: 12,
        d_model: 768,
        d_head: 64,
        d_mlp: 3072,
        vocab_size: 4096,
        max_context: 64,
        layernorm_epsilon: 1e-5,
    }
}

pub fn random_model(n_layers: usize) -> WeightStore {
    WeightStore::random(&bench_config(n_layers), 0, 0.02).expect("valid bench config")
}

/// A 15-token IOI-shaped prompt pair.
pub fn example(id: usize) -> IoiExample {
    let (io, s): (TokenId, TokenId) = (1000 + id as TokenId, 2000 + id as TokenId);
    let clean = vec![50, io, 51, s, 52, 53, 54, 55, 56, s, 57, 58, 59, 60, 61];
    let mut corrupt = clean.clone();
    corrupt[9] = io;
    IoiExample {
        id,
        template_id: 0,
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
        s2_pos: 9,
    }
}

pub fn dataset(n: usize) -> Vec<IoiExample> {
    (0..n).map(example).collect()
}
