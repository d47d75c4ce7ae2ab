// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters of a GPT-2 style decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_head: usize,
    pub d_mlp: usize,
    pub vocab_size: usize,
    pub max_context: usize,
    pub layernorm_epsilon: f32,
}

impl ModelConfig {
    /// GPT-2 Small (124M).
    pub fn gpt2_small() -> Self {
        Self {
            n_layers: 12,
            n_heads: 12,
            d_model: 768,
            d_head: 64,
            d_mlp: 3072,
            vocab_size: 50257,
            max_context: 1024,
            layernorm_epsilon: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_model", self.d_model),
            ("d_head", self.d_head),
            ("d_mlp", self.d_mlp),
            ("vocab_size", self.vocab_size),
            ("max_context", self.max_context),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be positive")));
        }
        if self.n_heads * self.d_head != self.d_model {
            return Err(Error::InvalidConfig(format!(
                "d_model ({}) != n_heads ({}) x d_head ({})",
                self.d_model, self.n_heads, self.d_head
            )));
        }
        if !(self.layernorm_epsilon.is_finite() && self.layernorm_epsilon > 0.0) {
            return Err(Error::InvalidConfig("layernorm_epsilon must be positive".into()));
        }
        Ok(())
    }

    pub fn total_heads(&self) -> usize {
        self.n_layers * self.n_heads
    }

    /// Reads a HuggingFace-style GPT-2 `config.json` (`n_layer`, `n_head`, `n_embd`, ...).
    pub fn from_hf_config(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct HfConfig {
            n_layer: usize,
            n_head: usize,
            n_embd: usize,
            vocab_size: usize,
            n_positions: usize,
            #[serde(default)]
            n_inner: Option<usize>,
            #[serde(default = "default_eps")]
            layer_norm_epsilon: f32,
        }
        fn default_eps() -> f32 {
            1e-5
        }

        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let hf: HfConfig = serde_json::from_str(&text)?;
        if hf.n_head == 0 || !hf.n_embd.is_multiple_of(hf.n_head) {
            return Err(Error::InvalidConfig(format!(
                "n_embd {} not divisible by n_head {}",
                hf.n_embd, hf.n_head
            )));
        }
        let cfg = Self {
            n_layers: hf.n_layer,
            n_heads: hf.n_head,
            d_model: hf.n_embd,
            d_head: hf.n_embd / hf.n_head,
            d_mlp: hf.n_inner.unwrap_or(4 * hf.n_embd),
            vocab_size: hf.vocab_size,
            max_context: hf.n_positions,
            layernorm_epsilon: hf.layer_norm_epsilon,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Writes the config in the HuggingFace layout read by [`ModelConfig::from_hf_config`].
    pub fn to_hf_json(&self) -> serde_json::Value {
        serde_json::json!({
            "model_type": "gpt2",
            "n_layer": self.n_layers,
            "n_head": self.n_heads,
            "n_embd": self.d_model,
            "n_inner": self.d_mlp,
            "vocab_size": self.vocab_size,
            "n_positions": self.max_context,
            "layer_norm_epsilon": self.layernorm_epsilon,
            "activation_function": "gelu_new",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gpt2_small_is_valid() {
        let cfg = ModelConfig::gpt2_small();
        cfg.validate().unwrap();
        assert_eq!(cfg.total_heads(), 144);
    }

    #[test]
    fn rejects_inconsistent_head_dims() {
        let mut cfg = ModelConfig::gpt2_small();
        cfg.d_head = 60;
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        cfg.d_head = 64;
        cfg.n_layers = 0;
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn hf_config_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        let cfg = ModelConfig {
            n_layers: 2,
            n_heads: 4,
            d_model: 32,
            d_head: 8,
            d_mlp: 128,
            vocab_size: 96,
            max_context: 32,
            layernorm_epsilon: 1e-5,
        };
        std::fs::write(&path, cfg.to_hf_json().to_string()).unwrap();
        assert_eq!(ModelConfig::from_hf_config(&path).unwrap(), cfg);
    }
}
