// SPDX-License-Identifier: MIT OR Apache-2.0

//! Byte-level BPE tokenizer reading the published GPT-2 `vocab.json` and
//! `merges.txt` files.

use std::collections::HashMap;
use std::path::Path;

use fancy_regex::Regex;

use crate::error::{Error, Result};
use crate::model::TokenId;

const PRETOKENIZE: &str = r"'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+";

/// The reversible byte -> printable-char table used by GPT-2.
fn byte_to_char_table() -> [char; 256] {
    let mut table = ['\0'; 256];
    let mut next = 256u32;
    for b in 0..=255u8 {
        let printable = matches!(b, b'!'..=b'~' | 0xA1..=0xAC | 0xAE..=0xFF);
        table[b as usize] = if printable {
            char::from(b)
        } else {
            let c = char::from_u32(next).expect("valid code point");
            next += 1;
            c
        };
    }
    table
}

#[derive(Debug, Clone)]
pub struct BpeTokenizer {
    token_to_id: HashMap<String, TokenId>,
    id_to_token: Vec<String>,
    /// `(left, right)` -> `(rank, merged id)`.
    merges: HashMap<(TokenId, TokenId), (u32, TokenId)>,
    byte_to_char: [char; 256],
    char_to_byte: HashMap<char, u8>,
    /// Token id of each single byte.
    byte_ids: [TokenId; 256],
    pretokenizer: Regex,
}

impl BpeTokenizer {
    pub fn from_files(vocab_path: &Path, merges_path: &Path) -> Result<Self> {
        let vocab = std::fs::read_to_string(vocab_path).map_err(|e| Error::io(vocab_path, e))?;
        let merges = std::fs::read_to_string(merges_path).map_err(|e| Error::io(merges_path, e))?;
        Self::from_strs(&vocab, &merges)
    }

    /// Loads `vocab.json` and `merges.txt` from one directory.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        Self::from_files(&dir.join("vocab.json"), &dir.join("merges.txt"))
    }

    pub fn from_strs(vocab_json: &str, merges_txt: &str) -> Result<Self> {
        let token_to_id: HashMap<String, TokenId> =
            serde_json::from_str(vocab_json).map_err(|e| Error::Tokenizer(format!("vocab.json: {e}")))?;
        let n = token_to_id.len();
        let mut id_to_token = vec![None; n];
        for (tok, &id) in &token_to_id {
            let slot = id_to_token
                .get_mut(id as usize)
                .ok_or_else(|| Error::Tokenizer(format!("id {id} of `{tok}` not dense in [0, {n})")))?;
            if slot.is_some() {
                return Err(Error::Tokenizer(format!("duplicate id {id}")));
            }
            *slot = Some(tok.clone());
        }
        let id_to_token: Vec<String> = id_to_token.into_iter().map(|t| t.expect("dense")).collect();

        let byte_to_char = byte_to_char_table();
        let char_to_byte: HashMap<char, u8> = byte_to_char.iter().enumerate().map(|(b, &c)| (c, b as u8)).collect();
        let mut byte_ids = [0; 256];
        for (b, c) in byte_to_char.iter().enumerate() {
            byte_ids[b] = *token_to_id
                .get(&c.to_string())
                .ok_or_else(|| Error::Tokenizer(format!("byte symbol {c:?} missing from vocab")))?;
        }

        let mut merges = HashMap::new();
        let mut rank = 0u32;
        for (lineno, line) in merges_txt.lines().enumerate() {
            if (lineno == 0 && line.starts_with("#version")) || line.trim().is_empty() {
                continue;
            }
            let (left, right) = line
                .split_once(' ')
                .ok_or_else(|| Error::Tokenizer(format!("merges.txt line {}: `{line}`", lineno + 1)))?;
            if let Some(c) = left
                .chars()
                .chain(right.chars())
                .find(|c| !char_to_byte.contains_key(c))
            {
                return Err(Error::Tokenizer(format!(
                    "merges.txt line {}: symbol {c:?} is not a byte symbol",
                    lineno + 1
                )));
            }
            let lookup = |s: &str| {
                token_to_id
                    .get(s)
                    .copied()
                    .ok_or_else(|| Error::Tokenizer(format!("merges.txt line {}: `{s}` not in vocab", lineno + 1)))
            };
            let key = (lookup(left)?, lookup(right)?);
            let merged = lookup(&format!("{left}{right}"))?;
            merges.entry(key).or_insert((rank, merged));
            rank += 1;
        }

        Ok(Self {
            token_to_id,
            id_to_token,
            merges,
            byte_to_char,
            char_to_byte,
            byte_ids,
            pretokenizer: Regex::new(PRETOKENIZE).expect("static pattern"),
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn token_id(&self, token: &str) -> Option<TokenId> {
        self.token_to_id.get(token).copied()
    }

    /// Applies merges to one pre-token, lowest rank first.
    fn bpe(&self, piece: &str, out: &mut Vec<TokenId>) {
        let mut word: Vec<TokenId> = piece.bytes().map(|b| self.byte_ids[b as usize]).collect();
        while word.len() > 1 {
            let best = word
                .windows(2)
                .filter_map(|w| {
                    self.merges
                        .get(&(w[0], w[1]))
                        .map(|&(rank, merged)| (rank, w[0], w[1], merged))
                })
                .min_by_key(|&(rank, ..)| rank);
            let Some((_, left, right, merged)) = best else { break };
            let mut next = Vec::with_capacity(word.len());
            let mut i = 0;
            while i < word.len() {
                if i + 1 < word.len() && word[i] == left && word[i + 1] == right {
                    next.push(merged);
                    i += 2;
                } else {
                    next.push(word[i]);
                    i += 1;
                }
            }
            word = next;
        }
        out.extend(word);
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        let mut out = Vec::new();
        for m in self.pretokenizer.find_iter(text) {
            // The pattern has no catastrophic backtracking; errors would indicate a bug.
            let m = m.expect("pretokenizer match");
            self.bpe(m.as_str(), &mut out);
        }
        out
    }

    /// Raw bytes of a token sequence; may be invalid UTF-8 for arbitrary ids.
    pub fn decode_bytes(&self, tokens: &[TokenId]) -> Result<Vec<u8>> {
        let mut bytes = Vec::new();
        for &id in tokens {
            let tok = self.id_to_token.get(id as usize).ok_or(Error::TokenOutOfRange {
                id,
                vocab_size: self.vocab_size(),
            })?;
            bytes.extend(tok.chars().map(|c| self.char_to_byte[&c]));
        }
        Ok(bytes)
    }

    pub fn decode(&self, tokens: &[TokenId]) -> Result<String> {
        Ok(String::from_utf8_lossy(&self.decode_bytes(tokens)?).into_owned())
    }

    pub fn is_single_token(&self, text: &str) -> bool {
        self.encode(text).len() == 1
    }

    /// Printable form of a byte, as stored in `vocab.json`.
    pub fn byte_symbol(&self, byte: u8) -> char {
        self.byte_to_char[byte as usize]
    }
}
