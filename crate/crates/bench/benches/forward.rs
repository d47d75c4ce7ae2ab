// SPDX-License-Identifier: MIT OR Apache-2.0

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use headlens::model::{final_logits, logit_decomposition};
use headlens::patching::{patched_logit_diff, run_patching_sweep, ExampleRuns};
use headlens::{forward, HeadIndex};
use headlens_bench::{dataset, example, random_model};

fn bench_forward(c: &mut Criterion) {
    let w = random_model(2);
    let ex = example(0);
    c.bench_function("forward_2_layers", |b| {
        b.iter(|| forward(&w, black_box(&ex.clean_tokens), &[]).unwrap())
    });
    c.bench_function("final_logits_2_layers", |b| {
        b.iter(|| final_logits(&w, black_box(&ex.clean_tokens), &[]).unwrap())
    });
    let out = forward(&w, &ex.clean_tokens, &[]).unwrap();
    c.bench_function("logit_decomposition", |b| {
        b.iter(|| logit_decomposition(&w, black_box(&out.cache), ex.io_id, ex.s_id).unwrap())
    });
}

fn bench_patching(c: &mut Criterion) {
    let w = random_model(2);
    let ex = example(0);
    let runs = ExampleRuns::new(&w, &ex).unwrap();
    c.bench_function("patched_resume_layer_1", |b| {
        b.iter(|| patched_logit_diff(&w, &ex, &runs, black_box(HeadIndex::new(1, 5))).unwrap())
    });

    let data = dataset(2);
    let mut group = c.benchmark_group("sweep");
    group.sample_size(10);
    group.bench_function("2_prompts_24_heads", |b| {
        b.iter(|| run_patching_sweep(&w, black_box(&data)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_forward, bench_patching);
criterion_main!(benches);
