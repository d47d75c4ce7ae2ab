// SPDX-License-Identifier: MIT OR Apache-2.0

//! # headlens
//!
//! Finds the attention heads of a GPT-2 model that causally drive indirect
//! object identification, explains the prediction in terms of those heads and
//! measures how faithful such explanations are.
//!
//! The crate is organised as a pipeline:
//!
//! - [`model`]: instrumented GPT-2 forward pass with head-level interventions.
//! - [`tokenizer`]: byte-level BPE compatible with the GPT-2 vocabulary.
//! - [`dataset`]: IOI prompts with clean/corrupt pairs.
//! - [`patching`]: logit differences, effect recovery and head ablation.
//! - [`faithfulness`]: sufficiency, comprehensiveness, F1 and baselines.
//! - [`circuit`]: circuit selection, failure taxonomy and augmentation.
//! - [`explain`]: template and LLM explanations plus quality scoring.
//! - [`pipeline`] / [`report`]: end-to-end orchestration and artifacts.

pub mod circuit;
pub mod dataset;
pub mod error;
pub mod explain;
pub mod faithfulness;
pub mod model;
pub mod patching;
pub mod pipeline;
pub mod report;
pub mod tokenizer;

pub use error::{Error, Result};
pub use model::{forward, load_weights, ActivationCache, HeadIndex, Intervention, ModelConfig, TokenId, WeightStore};
