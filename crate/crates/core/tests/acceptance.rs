// SPDX-License-Identifier: MIT OR Apache-2.0

//! Acceptance suite: one PASS/FAIL/BLOCKED line per criterion.
//!
//! Criteria 1 to 9 need GPT-2 Small weights, found through `HEADLENS_GPT2_DIR`
//! or `data/gpt2/model.safetensors`. Without them those lines print BLOCKED;
//! set `HEADLENS_REQUIRE_WEIGHTS=1` to turn BLOCKED into a failure.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::process::ExitCode;

use common::{synthetic_dataset, synthetic_example, tiny_weights};
use headlens::dataset::{default_name_pairs, default_templates, generate_dataset, write_jsonl};
use headlens::explain::{compare_methods, score_quality, template_explain, CircuitEvidence, MockChatClient};
use headlens::faithfulness::{comprehensiveness, f1, known_role, pearson_r};
use headlens::model::{final_logits, logit_decomposition};
use headlens::patching::{ablate_heads, effect_recovery, logit_diff, AblationMode, ExampleRuns};
use headlens::pipeline::{Artifact, EvaluationArtifact, Pipeline, RunConfig};
use headlens::report::RunSummary;
use headlens::tokenizer::BpeTokenizer;
use headlens::{forward, HeadIndex, Intervention, ModelConfig, WeightStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    Blocked(String),
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn within(v: f64, target: f64, tol: f64) -> bool {
    (v - target).abs() <= tol + 1e-12
}

fn pct(v: f64) -> String {
    format!("{:.1}%", v * 100.0)
}

fn circuit_heads() -> Vec<HeadIndex> {
    ["L9H9", "L8H10", "L7H3", "L10H6", "L9H6", "L10H0"]
        .iter()
        .map(|s| s.parse().unwrap())
        .collect()
}

fn gpt2_tokenizer() -> BpeTokenizer {
    BpeTokenizer::from_dir(&common::repo_root().join("data/gpt2")).expect("bundled GPT-2 vocabulary")
}

fn weights_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("HEADLENS_GPT2_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| common::repo_root().join("data/gpt2"));
    dir.join("model.safetensors").is_file().then_some(dir)
}

struct Reproduction {
    summary: RunSummary,
    eval: EvaluationArtifact,
}

fn reproduce(weights: PathBuf) -> Result<Reproduction, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut config = RunConfig {
        weights,
        tokenizer: common::repo_root().join("data/gpt2"),
        output_dir: tmp.path().join("run"),
        ..Default::default()
    };
    config.llm.endpoint = None;
    config.llm.mock_responses = Some(common::repo_root().join("crates/core/data/mock_llm_responses.json"));
    let p = Pipeline::new(config).map_err(|e| e.to_string())?;
    let summary = p.run_all(false).map_err(|e| e.to_string())?;
    let text = std::fs::read_to_string(tmp.path().join("run/evaluation.json")).map_err(|e| e.to_string())?;
    let eval: Artifact<EvaluationArtifact> = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    Ok(Reproduction {
        summary,
        eval: eval.data,
    })
}

fn reproduction_criteria(r: &Reproduction) -> Vec<Outcome> {
    let s = &r.summary;
    let mut out = Vec::new();

    let correct = (s.model_accuracy * s.n_examples as f64).round() as usize;
    out.push(check(
        s.n_examples == 50 && correct == 50,
        format!("{correct}/{} correct", s.n_examples),
    ));

    out.push(check(
        within(s.clean_logit_difference, 3.36, 0.30) && within(s.corrupt_logit_difference, -3.53, 0.40),
        format!(
            "clean LD {:.2} (3.36 +/- 0.30), corrupt LD {:.2} (-3.53 +/- 0.40)",
            s.clean_logit_difference, s.corrupt_logit_difference
        ),
    ));

    let got: BTreeSet<HeadIndex> = s.circuit.iter().map(|c| c.head).collect();
    let want: BTreeSet<HeadIndex> = circuit_heads().into_iter().collect();
    let top = s.circuit.first();
    let sum: f64 = s.circuit.iter().map(|c| c.effect).sum();
    out.push(check(
        top.is_some_and(|t| t.head == HeadIndex::new(9, 9) && within(t.effect, 0.174, 0.025))
            && got == want
            && within(sum, 0.614, 0.05),
        format!(
            "top {} {}, set {}, sum {}",
            top.map(|t| t.head.to_string()).unwrap_or_default(),
            top.map(|t| pct(t.effect)).unwrap_or_default(),
            if got == want { "matches" } else { "differs" },
            pct(sum)
        ),
    ));

    out.push(check(
        within(s.sufficiency_mean, 1.0, 1e-9) && within(s.sufficiency_std, 0.0, 1e-9),
        format!("sufficiency {} +/- {}", pct(s.sufficiency_mean), pct(s.sufficiency_std)),
    ));

    out.push(check(
        within(s.comprehensiveness_mean, 0.22, 0.05)
            && within(s.comprehensiveness_std, 0.173, 0.05)
            && within(s.f1, 0.36, 0.04),
        format!(
            "comprehensiveness {} +/- {}, F1 {}",
            pct(s.comprehensiveness_mean),
            pct(s.comprehensiveness_std),
            pct(s.f1)
        ),
    ));

    let a = &s.attention_baseline;
    out.push(check(
        within(a.f1, 0.206, 0.05) && within(a.sufficiency, 0.167, 0.06) && s.f1 > a.f1,
        format!(
            "attention baseline F1 {}, sufficiency {}; circuit F1 {}",
            pct(a.f1),
            pct(a.sufficiency),
            pct(s.f1)
        ),
    ));

    out.push(match s.confidence_comprehensiveness_r {
        Some(r) => check(r.abs() < 0.15, format!("r = {r:.3}")),
        None => Outcome::Fail("correlation undefined".into()),
    });

    out.push(check(
        within(s.low_comprehensiveness_fraction, 0.34, 0.10)
            && within(s.near_threshold_fraction, 0.30, 0.10)
            && within(s.high_comprehensiveness_fraction, 0.36, 0.10),
        format!(
            "low {} near {} high {}",
            pct(s.low_comprehensiveness_fraction),
            pct(s.near_threshold_fraction),
            pct(s.high_comprehensiveness_fraction)
        ),
    ));

    out.push(match &r.eval.augmentation {
        Some(a) => check(
            a.f1_after - a.f1_before < 0.01 && within(a.f1_after, 0.344, 0.03),
            format!("+{}: F1 {} -> {}", a.extra_head, pct(a.f1_before), pct(a.f1_after)),
        ),
        None => Outcome::Fail(
            r.eval
                .augmentation_note
                .clone()
                .unwrap_or_else(|| "augmentation missing".into()),
        ),
    });
    out
}

/// Evidence for every default prompt with the model predicting the IO name.
fn offline_evidence(tok: &BpeTokenizer) -> Vec<CircuitEvidence> {
    let data = generate_dataset(tok, &default_name_pairs(), &default_templates(), 42).unwrap();
    let heads = circuit_heads();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    data.iter()
        .take(50)
        .map(|ex| {
            let io = ex.io_name.trim().to_string();
            let mut attention_to_io = BTreeMap::new();
            let mut attention_to_s = BTreeMap::new();
            let mut contributions = BTreeMap::new();
            for &h in &heads {
                let a: f64 = rng.random_range(0.0..100.0);
                attention_to_io.insert(h, a);
                attention_to_s.insert(h, rng.random_range(0.0..(100.0 - a)));
                contributions.insert(h, rng.random_range(-0.5..1.5));
            }
            CircuitEvidence {
                example_id: ex.id,
                prompt: ex.clean_prompt.clone(),
                predicted_token: io.clone(),
                io_name: io,
                s_name: ex.s_name.trim().to_string(),
                confidence: rng.random_range(0.2..0.9),
                cited_heads: heads.clone(),
                roles: heads.iter().map(|&h| (h, known_role(h))).collect(),
                attention_to_io,
                attention_to_s,
                contributions,
            }
        })
        .collect()
}

fn template_quality(evidence: &[CircuitEvidence]) -> Outcome {
    let mut words = Vec::new();
    for ev in evidence {
        let e = match template_explain(ev) {
            Ok(e) => e,
            Err(err) => return Outcome::Fail(err.to_string()),
        };
        let q = score_quality(&e, ev);
        if q.overall != 0.6 {
            return Outcome::Fail(format!("example {} scored {}", ev.example_id, pct(q.overall)));
        }
        words.push(e.word_count as f64);
    }
    let mean = words.iter().sum::<f64>() / words.len() as f64;
    check(
        within(mean, 21.0, 3.0),
        format!(
            "60.0% on {}/{} examples, mean {mean:.1} words",
            words.len(),
            evidence.len()
        ),
    )
}

type PropertyCheck = fn() -> Result<(), String>;

fn property_suite() -> Outcome {
    let checks: [(&str, PropertyCheck); 9] = [
        ("self-patch identity", self_patch_identity),
        ("patch-all recovery", patch_all_recovery),
        ("empty ablation", empty_ablation),
        ("F1 identities", f1_identities),
        ("Pearson affine invariance", pearson_invariance),
        ("tokenizer round trip", tokenizer_round_trip),
        ("tokenizer fixture", tokenizer_fixture),
        ("dataset determinism", dataset_determinism),
        ("DLA additivity", dla_additivity),
    ];
    let failures: Vec<String> = checks
        .iter()
        .filter_map(|(name, f)| f().err().map(|e| format!("{name}: {e}")))
        .collect();
    check(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{} property checks", checks.len())
        } else {
            failures.join("; ")
        },
    )
}

fn self_patch_identity() -> Result<(), String> {
    let w = tiny_weights();
    for ex in synthetic_dataset(3, 96) {
        let runs = ExampleRuns::new(&w, &ex).map_err(|e| e.to_string())?;
        for head in HeadIndex::all(w.config()) {
            let z = runs.clean.cache.head_z(head).to_owned();
            let logits = final_logits(&w, &ex.clean_tokens, &[Intervention::replace_all(head, z)]).unwrap();
            let diff = (logit_diff(&logits, ex.io_id, ex.s_id) - runs.ld_clean).abs();
            if diff > 1e-5 {
                return Err(format!("{head} moved LD by {diff}"));
            }
        }
    }
    Ok(())
}

fn patch_all_recovery() -> Result<(), String> {
    let cfg = ModelConfig {
        n_layers: 1,
        n_heads: 1,
        d_model: 16,
        d_head: 16,
        d_mlp: 32,
        vocab_size: 96,
        max_context: 32,
        layernorm_epsilon: 1e-5,
    };
    let mut tensors = WeightStore::random(&cfg, 3, 0.5).unwrap().to_tensors();
    for (name, t) in tensors.iter_mut() {
        if name.contains(".mlp.") {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let w = WeightStore::from_tensors(cfg, tensors).unwrap();
    let ex = synthetic_example(0, 0, 40, 50, [1, 2, 3, 4, 5]);
    let runs = ExampleRuns::new(&w, &ex).map_err(|e| e.to_string())?;
    let effect = effect_recovery(&w, &ex, &runs, HeadIndex::new(0, 0)).map_err(|e| e.to_string())?;
    if (effect - 1.0).abs() > 1e-4 {
        return Err(format!("effect {effect}"));
    }
    Ok(())
}

fn empty_ablation() -> Result<(), String> {
    let w = tiny_weights();
    for ex in synthetic_dataset(4, 96) {
        let ld_clean = ExampleRuns::new(&w, &ex).map_err(|e| e.to_string())?.ld_clean;
        if ld_clean <= 0.0 {
            continue;
        }
        let ld = ablate_heads(&w, &ex, &[], AblationMode::Zero, None).map_err(|e| e.to_string())?;
        let c = comprehensiveness(ex.id, ld_clean, ld).map_err(|e| e.to_string())?;
        if c.raw.abs() > 1e-6 {
            return Err(format!("comprehensiveness {}", c.raw));
        }
    }
    Ok(())
}

fn f1_identities() -> Result<(), String> {
    let cases = [
        (1.0, 1.0, 1.0),
        (0.0, 0.0, 0.0),
        (1.0, 0.0, 0.0),
        (0.5, 0.5, 0.5),
        (1.0, 0.22, 0.44 / 1.22),
    ];
    for (s, c, want) in cases {
        if (f1(s, c) - want).abs() > 1e-12 || (f1(s, c) - f1(c, s)).abs() > 1e-12 {
            return Err(format!("F1({s}, {c}) = {}", f1(s, c)));
        }
    }
    Ok(())
}

fn pearson_invariance() -> Result<(), String> {
    let x: Vec<f64> = (0..10).map(|i| (i as f64 * 1.7).sin()).collect();
    let y: Vec<f64> = (0..10).map(|i| (i as f64 * 0.9).cos() + 0.1 * i as f64).collect();
    let r = pearson_r(&x, &y).map_err(|e| e.to_string())?;
    let xs: Vec<f64> = x.iter().map(|v| 3.0 * v - 2.0).collect();
    let ys: Vec<f64> = y.iter().map(|v| 0.5 * v + 9.0).collect();
    let r2 = pearson_r(&xs, &ys).map_err(|e| e.to_string())?;
    let flipped: Vec<f64> = y.iter().map(|v| -v).collect();
    let r3 = pearson_r(&x, &flipped).map_err(|e| e.to_string())?;
    if (r - r2).abs() > 1e-9 || (r + r3).abs() > 1e-9 {
        return Err(format!("r {r}, affine {r2}, negated {r3}"));
    }
    Ok(())
}

fn tokenizer_round_trip() -> Result<(), String> {
    let tok = gpt2_tokenizer();
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    for _ in 0..1000 {
        let len = rng.random_range(0..30);
        let s: String = (0..len)
            .map(|_| match rng.random_range(0..4) {
                0 => char::from(rng.random_range(b' '..=b'~')),
                1 => ' ',
                _ => loop {
                    if let Some(c) = char::from_u32(rng.random_range(0x20..0x2_0000)) {
                        if !c.is_control() {
                            break c;
                        }
                    }
                },
            })
            .collect();
        let back = tok.decode(&tok.encode(&s)).map_err(|e| e.to_string())?;
        if back != s {
            return Err(format!("{s:?} decoded as {back:?}"));
        }
    }
    Ok(())
}

fn tokenizer_fixture() -> Result<(), String> {
    #[derive(serde::Deserialize)]
    struct Case {
        text: String,
        ids: Vec<u32>,
    }
    let tok = gpt2_tokenizer();
    let text =
        std::fs::read_to_string(common::data_dir().join("tokenizer_fixture.jsonl")).map_err(|e| e.to_string())?;
    let cases: Vec<Case> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    if cases.len() != 200 {
        return Err(format!("{} fixture lines", cases.len()));
    }
    let bad = cases.iter().filter(|c| tok.encode(&c.text) != c.ids).count();
    if bad > 0 {
        return Err(format!("{bad} mismatches"));
    }
    Ok(())
}

fn dataset_determinism() -> Result<(), String> {
    let tok = gpt2_tokenizer();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut files = Vec::new();
    for name in ["a.jsonl", "b.jsonl"] {
        let data =
            generate_dataset(&tok, &default_name_pairs(), &default_templates(), 42).map_err(|e| e.to_string())?;
        let path = tmp.path().join(name);
        write_jsonl(&path, &data).map_err(|e| e.to_string())?;
        files.push(std::fs::read(path).map_err(|e| e.to_string())?);
    }
    if files[0] != files[1] {
        return Err("regenerated dataset differs".into());
    }
    Ok(())
}

fn dla_additivity() -> Result<(), String> {
    let w = tiny_weights();
    for ex in synthetic_dataset(6, 96) {
        let out = forward(&w, &ex.clean_tokens, &[]).map_err(|e| e.to_string())?;
        let d = logit_decomposition(&w, &out.cache, ex.io_id, ex.s_id).map_err(|e| e.to_string())?;
        let ld = logit_diff(&out.logits, ex.io_id, ex.s_id) as f64;
        if (d.total() - ld).abs() > 1e-5 * ld.abs().max(1.0) {
            return Err(format!("parts sum to {} vs {ld}", d.total()));
        }
    }
    Ok(())
}

fn llm_path(evidence: &[CircuitEvidence]) -> Outcome {
    let mock = match MockChatClient::from_file(&common::repo_root().join("crates/core/data/mock_llm_responses.json")) {
        Ok(m) => m,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let subset = &evidence[..30];
    let cmp = match compare_methods(subset, Some(&mock), 4) {
        Ok(c) => c,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let llm_scores: Vec<f64> = cmp.llm_explanations.iter().map(|s| s.score.overall).collect();
    let tpl_scores: Vec<f64> = cmp.template_explanations.iter().map(|s| s.score.overall).collect();
    let ok = llm_scores.len() == subset.len()
        && llm_scores.iter().all(|&s| s == 1.0)
        && tpl_scores.iter().all(|&s| s == 0.6)
        && !cmp.llm_partial;
    check(
        ok,
        format!(
            "offline compare on {} prompts: llm {} (5/5 each), template {} (3/5 each)",
            subset.len(),
            pct(cmp.llm.as_ref().map(|q| q.overall).unwrap_or(0.0)),
            pct(cmp.template.overall)
        ),
    )
}

fn main() -> ExitCode {
    let names = [
        "IOI accuracy",
        "logit differences",
        "top heads",
        "circuit sufficiency",
        "comprehensiveness and F1",
        "attention-entropy baseline",
        "confidence correlation",
        "comprehensiveness histogram",
        "augmentation",
        "template quality",
        "property suite",
        "LLM path (mock)",
    ];
    let require = std::env::var("HEADLENS_REQUIRE_WEIGHTS").is_ok_and(|v| v == "1");
    let mut outcomes: Vec<Outcome> = match weights_dir() {
        Some(dir) => match reproduce(dir) {
            Ok(r) => reproduction_criteria(&r),
            Err(e) => (0..9).map(|_| Outcome::Fail(format!("pipeline failed: {e}"))).collect(),
        },
        None => (0..9)
            .map(|_| Outcome::Blocked("GPT-2 weights not found (set HEADLENS_GPT2_DIR)".into()))
            .collect(),
    };
    let tok = gpt2_tokenizer();
    let evidence = offline_evidence(&tok);
    outcomes.push(template_quality(&evidence));
    outcomes.push(property_suite());
    outcomes.push(llm_path(&evidence));

    let mut failed = false;
    for (i, (name, outcome)) in names.iter().zip(&outcomes).enumerate() {
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed = true;
                ("FAIL", d)
            }
            Outcome::Blocked(d) => {
                failed |= require;
                ("BLOCKED", d)
            }
        };
        println!("[{tag}] {:>2}. {name}: {detail}", i + 1);
    }
    if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
