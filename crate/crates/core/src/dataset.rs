// SPDX-License-Identifier: MIT OR Apache-2.0

//! Indirect-object-identification prompts.
//!
//! A clean prompt reads "When {IO} and {S} went to the {place}, {S} gave a
//! {object} to", so the expected completion is IO. The corrupted prompt
//! replaces the second S with IO, which flips the expected completion to S.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TokenId;
use crate::tokenizer::BpeTokenizer;

/// The shipped name-pair list (one `IO,S` pair per line).
pub const DEFAULT_NAME_PAIRS: &str = include_str!("../data/name_pairs.txt");

const IO_SLOT: &str = "{IO}";
const S_SLOT: &str = "{S}";
const PLACE_SLOT: &str = "{PLACE}";
const OBJECT_SLOT: &str = "{OBJECT}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: usize,
    /// Format string with `{IO}`, `{S}`, `{PLACE}` and `{OBJECT}` slots.
    pub format: String,
    pub place: String,
    pub object: String,
}

impl PromptTemplate {
    pub fn new(id: usize, format: &str, place: &str, object: &str) -> Result<Self> {
        let t = Self {
            id,
            format: format.to_string(),
            place: place.to_string(),
            object: object.to_string(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let count = |slot: &str| self.format.matches(slot).count();
        let bad = |msg: &str| Err(Error::InvalidTemplate(format!("{msg}: `{}`", self.format)));
        if count(S_SLOT) != 2 {
            return bad("{S} must appear exactly twice");
        }
        if count(IO_SLOT) != 1 {
            return bad("{IO} must appear exactly once");
        }
        if self.format.find(IO_SLOT) > self.format.rfind(S_SLOT) {
            return bad("{IO} must precede the repeated {S}");
        }
        if self.format.ends_with(char::is_whitespace) || self.format.ends_with('}') {
            return bad("template must end right before the answer");
        }
        for slot in [IO_SLOT, S_SLOT] {
            let mut rest = self.format.as_str();
            while let Some(i) = rest.find(slot) {
                if i == 0 || !rest[..i].ends_with(' ') {
                    return bad("names must follow a space");
                }
                rest = &rest[i + slot.len()..];
            }
        }
        Ok(())
    }

    fn fill(&self, first_io: &str, first_s: &str, second_s: &str) -> String {
        let with_objects = self
            .format
            .replace(PLACE_SLOT, &self.place)
            .replace(OBJECT_SLOT, &self.object);
        let first = with_objects.find(S_SLOT).expect("validated");
        let second = with_objects.rfind(S_SLOT).expect("validated");
        let mut out = String::with_capacity(with_objects.len() + 32);
        out.push_str(&with_objects[..first]);
        out.push_str(first_s);
        out.push_str(&with_objects[first + S_SLOT.len()..second]);
        out.push_str(second_s);
        out.push_str(&with_objects[second + S_SLOT.len()..]);
        out.replace(IO_SLOT, first_io)
    }

    pub fn render(&self, io: &str, s: &str) -> String {
        self.fill(io, s, s)
    }

    /// The corrupted prompt: the second S occurrence becomes IO.
    pub fn render_corrupt(&self, io: &str, s: &str) -> String {
        self.fill(io, s, io)
    }
}

/// The two IOI templates used for evaluation.
pub fn default_templates() -> Vec<PromptTemplate> {
    vec![
        PromptTemplate::new(
            0,
            "When {IO} and {S} went to the {PLACE}, {S} gave a {OBJECT} to",
            "store",
            "drink",
        )
        .expect("valid template"),
        PromptTemplate::new(
            1,
            "When {IO} and {S} went to the {PLACE}, {S} handed a {OBJECT} to",
            "park",
            "flower",
        )
        .expect("valid template"),
    ]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamePair {
    pub io: String,
    pub s: String,
}

impl NamePair {
    pub fn new(io: &str, s: &str) -> Self {
        Self {
            io: io.to_string(),
            s: s.to_string(),
        }
    }
}

/// Parses `IO,S` lines; `#` starts a comment line.
pub fn parse_name_pairs(text: &str) -> Result<Vec<NamePair>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let (io, s) = l
                .split_once(',')
                .ok_or_else(|| Error::Dataset(format!("malformed name pair line `{l}`")))?;
            Ok(NamePair::new(io.trim(), s.trim()))
        })
        .collect()
}

pub fn default_name_pairs() -> Vec<NamePair> {
    parse_name_pairs(DEFAULT_NAME_PAIRS).expect("bundled name pairs parse")
}

/// One clean/corrupt prompt pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IoiExample {
    pub id: usize,
    pub template_id: usize,
    pub name_pair_id: usize,
    pub io_name: String,
    pub s_name: String,
    pub clean_prompt: String,
    pub corrupt_prompt: String,
    pub clean_tokens: Vec<TokenId>,
    pub corrupt_tokens: Vec<TokenId>,
    pub io_id: TokenId,
    pub s_id: TokenId,
    pub io_pos: usize,
    pub s1_pos: usize,
    pub s2_pos: usize,
}

impl IoiExample {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Dataset(format!("example {}: {msg}", self.id)));
        if self.clean_tokens.len() != self.corrupt_tokens.len() {
            return bad("clean and corrupt lengths differ".into());
        }
        if self.io_id == self.s_id {
            return bad("IO and S share a token".into());
        }
        let n = self.clean_tokens.len();
        if [self.io_pos, self.s1_pos, self.s2_pos].iter().any(|&p| p >= n) {
            return bad("name position out of range".into());
        }
        if self.clean_tokens[self.io_pos] != self.io_id
            || self.clean_tokens[self.s1_pos] != self.s_id
            || self.clean_tokens[self.s2_pos] != self.s_id
        {
            return bad("name tokens not at recorded positions".into());
        }
        if self.corrupt_tokens[self.s2_pos] != self.io_id {
            return bad("corrupt prompt does not repeat IO".into());
        }
        Ok(())
    }

    /// Positions holding the S name in the clean prompt.
    pub fn s_positions(&self) -> [usize; 2] {
        [self.s1_pos, self.s2_pos]
    }
}

fn single_token(tokenizer: &BpeTokenizer, name: &str) -> Result<TokenId> {
    let ids = tokenizer.encode(&format!(" {name}"));
    match ids.as_slice() {
        [id] => Ok(*id),
        _ => Err(Error::MultiTokenName(name.to_string())),
    }
}

/// Corrupted token sequence for one (template, IO, S) combination.
pub fn corrupt(tokenizer: &BpeTokenizer, template: &PromptTemplate, io: &str, s: &str) -> Vec<TokenId> {
    tokenizer.encode(&template.render_corrupt(io, s))
}

fn build_example(
    tokenizer: &BpeTokenizer,
    template: &PromptTemplate,
    pair_id: usize,
    pair: &NamePair,
) -> Result<IoiExample> {
    let io_id = single_token(tokenizer, &pair.io)?;
    let s_id = single_token(tokenizer, &pair.s)?;
    if io_id == s_id {
        return Err(Error::Dataset(format!(
            "names `{}` and `{}` are identical",
            pair.io, pair.s
        )));
    }
    let clean_prompt = template.render(&pair.io, &pair.s);
    let corrupt_prompt = template.render_corrupt(&pair.io, &pair.s);
    let clean_tokens = tokenizer.encode(&clean_prompt);
    let corrupt_tokens = tokenizer.encode(&corrupt_prompt);

    let find = |id: TokenId| -> Vec<usize> {
        clean_tokens
            .iter()
            .enumerate()
            .filter(|(_, &t)| t == id)
            .map(|(i, _)| i)
            .collect()
    };
    let (io_positions, s_positions) = (find(io_id), find(s_id));
    if io_positions.len() != 1 || s_positions.len() != 2 {
        return Err(Error::Dataset(format!(
            "prompt `{clean_prompt}` does not tokenize with isolated name tokens"
        )));
    }
    let example = IoiExample {
        id: 0,
        template_id: template.id,
        name_pair_id: pair_id,
        io_name: pair.io.clone(),
        s_name: pair.s.clone(),
        clean_prompt,
        corrupt_prompt,
        clean_tokens,
        corrupt_tokens,
        io_id,
        s_id,
        io_pos: io_positions[0],
        s1_pos: s_positions[0],
        s2_pos: s_positions[1],
    };
    example.validate()?;
    Ok(example)
}

/// One example per (name pair, template), shuffled deterministically by `seed`.
pub fn generate_dataset(
    tokenizer: &BpeTokenizer,
    name_pairs: &[NamePair],
    templates: &[PromptTemplate],
    seed: u64,
) -> Result<Vec<IoiExample>> {
    let mut seen = HashSet::new();
    for pair in name_pairs {
        if !seen.insert((pair.io.as_str(), pair.s.as_str())) {
            return Err(Error::DuplicatePair(pair.io.clone(), pair.s.clone()));
        }
        single_token(tokenizer, &pair.io)?;
        single_token(tokenizer, &pair.s)?;
    }
    for t in templates {
        t.validate()?;
    }

    let mut examples = Vec::with_capacity(name_pairs.len() * templates.len());
    for (pair_id, pair) in name_pairs.iter().enumerate() {
        for template in templates {
            examples.push(build_example(tokenizer, template, pair_id, pair)?);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    examples.shuffle(&mut rng);
    for (i, ex) in examples.iter_mut().enumerate() {
        ex.id = i;
    }
    Ok(examples)
}

pub fn write_jsonl(path: &Path, examples: &[IoiExample]) -> Result<()> {
    let mut out = Vec::new();
    for ex in examples {
        serde_json::to_writer(&mut out, ex)?;
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<IoiExample>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let ex: IoiExample = serde_json::from_str(l)?;
            ex.validate()?;
            Ok(ex)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn templates_render_the_ioi_sentence() {
        let t = &default_templates()[0];
        assert_eq!(
            t.render("Mary", "John"),
            "When Mary and John went to the store, John gave a drink to"
        );
        assert_eq!(
            t.render_corrupt("Mary", "John"),
            "When Mary and John went to the store, Mary gave a drink to"
        );
    }

    #[test]
    fn corrupted_prompt_is_a_clean_prompt_with_roles_swapped() {
        // Under roles (IO'=S, S'=IO) the corrupted sentence has S' twice and IO' once.
        let t = &default_templates()[1];
        let corrupted = t.render_corrupt("Mary", "John");
        assert_eq!(corrupted.matches("Mary").count(), 2);
        assert_eq!(corrupted.matches("John").count(), 1);
        assert!(corrupted.ends_with(", Mary handed a flower to"));
    }

    #[test]
    fn template_validation() {
        assert!(PromptTemplate::new(0, "When {IO} and {S} went, {S} gave it to", "", "").is_ok());
        assert!(PromptTemplate::new(0, "When {IO} and {S} went, gave it to", "", "").is_err());
        assert!(PromptTemplate::new(0, "When {IO} and {IO} {S} went, {S} gave it to", "", "").is_err());
        assert!(PromptTemplate::new(0, "When {IO} and {S} went, {S} gave it to ", "", "").is_err());
        assert!(PromptTemplate::new(0, "{IO} and {S} went, {S} gave it to", "", "").is_err());
        assert!(PromptTemplate::new(0, "When {S} and {S} went, {IO} gave it to", "", "").is_err());
    }

    #[test]
    fn name_pair_file_parses() {
        let pairs = default_name_pairs();
        assert_eq!(pairs.len(), 25);
        assert_eq!(pairs[0], NamePair::new("Mary", "John"));
        assert!(
            parse_name_pairs("# c\nA,B\n\n C , D \n").unwrap()
                == vec![NamePair::new("A", "B"), NamePair::new("C", "D")]
        );
        assert!(parse_name_pairs("AB\n").is_err());
    }
}
