// SPDX-License-Identifier: MIT OR Apache-2.0

//! GPT-2 runtime: checkpoint loading, the instrumented forward pass and
//! direct logit attribution.

mod attribution;
mod config;
mod forward;
mod head;
mod weights;

pub use attribution::{all_head_contributions, head_logit_contribution, logit_decomposition, LogitDecomposition};
pub use config::ModelConfig;
pub use forward::{
    final_logits, forward, resume_final_logits, ActivationCache, ForwardOutput, Intervention, InterventionAction,
    LayerCache, Positions, TokenId,
};
pub use head::HeadIndex;
pub use weights::{load_weights, NamedTensor, WeightStore};
