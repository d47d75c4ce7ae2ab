// SPDX-License-Identifier: MIT OR Apache-2.0

//! Byte-level BPE against ids produced by the reference tokenizer.

mod common;

use std::sync::OnceLock;

use headlens::tokenizer::BpeTokenizer;
use headlens::TokenId;
use proptest::prelude::*;
use serde::Deserialize;

fn gpt2() -> &'static BpeTokenizer {
    static TOK: OnceLock<BpeTokenizer> = OnceLock::new();
    TOK.get_or_init(|| {
        BpeTokenizer::from_dir(&common::repo_root().join("data/gpt2")).expect("bundled GPT-2 vocabulary")
    })
}

#[derive(Deserialize)]
struct Case {
    text: String,
    ids: Vec<TokenId>,
}

#[test]
fn encodes_fixture_exactly() {
    let text = std::fs::read_to_string(common::data_dir().join("tokenizer_fixture.jsonl")).unwrap();
    let cases: Vec<Case> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(cases.len(), 200);
    let mut mismatches = Vec::new();
    for c in &cases {
        let got = gpt2().encode(&c.text);
        if got != c.ids {
            mismatches.push(format!("{:?}: got {got:?}, want {:?}", c.text, c.ids));
        }
        assert_eq!(gpt2().decode(&c.ids).unwrap(), c.text);
    }
    assert!(
        mismatches.is_empty(),
        "{} mismatches:\n{}",
        mismatches.len(),
        mismatches.join("\n")
    );
}

#[test]
fn vocabulary_shape() {
    assert_eq!(gpt2().vocab_size(), 50257);
    assert_eq!(gpt2().token_id("<|endoftext|>"), Some(50256));
    assert_eq!(gpt2().encode(" Mary"), vec![5335]);
    assert!(gpt2().is_single_token(" Mary"));
    assert!(!gpt2().is_single_token(" Bartholomew"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn decode_inverts_encode(s in "\\PC{0,40}") {
        let ids = gpt2().encode(&s);
        prop_assert_eq!(gpt2().decode(&ids).unwrap(), s);
    }

    #[test]
    fn ascii_round_trip(s in "[ -~\\n\\t]{0,60}") {
        let ids = gpt2().encode(&s);
        prop_assert_eq!(gpt2().decode(&ids).unwrap(), s);
    }
}
