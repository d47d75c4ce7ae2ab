// SPDX-License-Identifier: MIT OR Apache-2.0

//! GPT-2 checkpoint container.
//!
//! Checkpoints are read from and written to the safetensors layout (8-byte
//! little-endian header length, JSON header, row-major payload). Tensor names
//! follow the published GPT-2 checkpoints, optionally prefixed with
//! `transformer.`:
//!
//! | name                          | shape                      |
//! |-------------------------------|----------------------------|
//! | `wte.weight`                  | `[vocab_size, d_model]`    |
//! | `wpe.weight`                  | `[max_context, d_model]`   |
//! | `h.{i}.ln_1.{weight,bias}`    | `[d_model]`                |
//! | `h.{i}.attn.c_attn.weight`    | `[d_model, 3 * d_model]`   |
//! | `h.{i}.attn.c_attn.bias`      | `[3 * d_model]`            |
//! | `h.{i}.attn.c_proj.weight`    | `[d_model, d_model]`       |
//! | `h.{i}.attn.c_proj.bias`      | `[d_model]`                |
//! | `h.{i}.ln_2.{weight,bias}`    | `[d_model]`                |
//! | `h.{i}.mlp.c_fc.weight`       | `[d_model, d_mlp]`         |
//! | `h.{i}.mlp.c_fc.bias`         | `[d_mlp]`                  |
//! | `h.{i}.mlp.c_proj.weight`     | `[d_mlp, d_model]`         |
//! | `h.{i}.mlp.c_proj.bias`       | `[d_model]`                |
//! | `ln_f.{weight,bias}`          | `[d_model]`                |
//!
//! The projection matrices are stored input-major (`x @ W + b`). The
//! unembedding is tied to `wte.weight`. Extra tensors (such as the causal mask
//! buffers `h.{i}.attn.bias` in older checkpoints) are ignored.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use safetensors::tensor::{Dtype, SafeTensors, TensorView};

use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// A tensor detached from any container: row-major `f32` data plus shape.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone)]
pub(crate) struct LayerWeights {
    pub ln1_scale: Array1<f32>,
    pub ln1_bias: Array1<f32>,
    pub w_qkv: Array2<f32>,
    pub b_qkv: Array1<f32>,
    pub w_out: Array2<f32>,
    pub b_out: Array1<f32>,
    pub ln2_scale: Array1<f32>,
    pub ln2_bias: Array1<f32>,
    pub w_fc: Array2<f32>,
    pub b_fc: Array1<f32>,
    pub w_proj: Array2<f32>,
    pub b_proj: Array1<f32>,
}

/// Validated, immutable model parameters. Safe to share across threads.
#[derive(Debug, Clone)]
pub struct WeightStore {
    config: ModelConfig,
    pub(crate) wte: Array2<f32>,
    pub(crate) wpe: Array2<f32>,
    pub(crate) layers: Vec<LayerWeights>,
    pub(crate) lnf_scale: Array1<f32>,
    pub(crate) lnf_bias: Array1<f32>,
}

fn expected_shapes(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = config.d_model;
    let mut out = vec![
        ("wte.weight".to_string(), vec![config.vocab_size, d]),
        ("wpe.weight".to_string(), vec![config.max_context, d]),
    ];
    for i in 0..config.n_layers {
        let p = format!("h.{i}.");
        out.extend([
            (format!("{p}ln_1.weight"), vec![d]),
            (format!("{p}ln_1.bias"), vec![d]),
            (format!("{p}attn.c_attn.weight"), vec![d, 3 * d]),
            (format!("{p}attn.c_attn.bias"), vec![3 * d]),
            (format!("{p}attn.c_proj.weight"), vec![d, d]),
            (format!("{p}attn.c_proj.bias"), vec![d]),
            (format!("{p}ln_2.weight"), vec![d]),
            (format!("{p}ln_2.bias"), vec![d]),
            (format!("{p}mlp.c_fc.weight"), vec![d, config.d_mlp]),
            (format!("{p}mlp.c_fc.bias"), vec![config.d_mlp]),
            (format!("{p}mlp.c_proj.weight"), vec![config.d_mlp, d]),
            (format!("{p}mlp.c_proj.bias"), vec![d]),
        ]);
    }
    out.push(("ln_f.weight".to_string(), vec![d]));
    out.push(("ln_f.bias".to_string(), vec![d]));
    out
}

fn decode_view(name: &str, view: &TensorView<'_>) -> Result<NamedTensor> {
    let bytes = view.data();
    let data: Vec<f32> = match view.dtype() {
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")) as f32)
            .collect(),
        other => {
            return Err(Error::WeightFormat(format!(
                "tensor `{name}` has unsupported dtype {other:?}"
            )))
        }
    };
    Ok(NamedTensor {
        shape: view.shape().to_vec(),
        data,
    })
}

/// Loads and validates a checkpoint for `config`.
pub fn load_weights(path: &Path, config: &ModelConfig) -> Result<WeightStore> {
    config.validate()?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let st = SafeTensors::deserialize(&bytes).map_err(|e| Error::WeightFormat(e.to_string()))?;
    let mut tensors = BTreeMap::new();
    for (name, view) in st.tensors() {
        let key = name.strip_prefix("transformer.").unwrap_or(&name).to_string();
        tensors.insert(key, decode_view(&name, &view)?);
    }
    WeightStore::from_tensors(config.clone(), tensors)
}

impl WeightStore {
    /// Builds a store from named tensors, enforcing presence, shape and finiteness.
    pub fn from_tensors(config: ModelConfig, mut tensors: BTreeMap<String, NamedTensor>) -> Result<Self> {
        config.validate()?;
        for (name, shape) in expected_shapes(&config) {
            let t = tensors.get(&name).ok_or_else(|| Error::MissingTensor(name.clone()))?;
            if t.shape != shape {
                return Err(Error::ShapeMismatch {
                    name,
                    expected: shape,
                    found: t.shape.clone(),
                });
            }
            if t.data.len() != shape.iter().product::<usize>() {
                return Err(Error::WeightFormat(format!("tensor `{name}` payload size mismatch")));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(name));
            }
        }

        fn take1(t: &mut BTreeMap<String, NamedTensor>, name: &str) -> Array1<f32> {
            Array1::from(t.remove(name).expect("validated").data)
        }
        fn take2(t: &mut BTreeMap<String, NamedTensor>, name: &str) -> Array2<f32> {
            let t = t.remove(name).expect("validated");
            Array2::from_shape_vec((t.shape[0], t.shape[1]), t.data).expect("validated shape")
        }

        let t = &mut tensors;
        let layers = (0..config.n_layers)
            .map(|i| {
                let p = format!("h.{i}.");
                LayerWeights {
                    ln1_scale: take1(t, &format!("{p}ln_1.weight")),
                    ln1_bias: take1(t, &format!("{p}ln_1.bias")),
                    w_qkv: take2(t, &format!("{p}attn.c_attn.weight")),
                    b_qkv: take1(t, &format!("{p}attn.c_attn.bias")),
                    w_out: take2(t, &format!("{p}attn.c_proj.weight")),
                    b_out: take1(t, &format!("{p}attn.c_proj.bias")),
                    ln2_scale: take1(t, &format!("{p}ln_2.weight")),
                    ln2_bias: take1(t, &format!("{p}ln_2.bias")),
                    w_fc: take2(t, &format!("{p}mlp.c_fc.weight")),
                    b_fc: take1(t, &format!("{p}mlp.c_fc.bias")),
                    w_proj: take2(t, &format!("{p}mlp.c_proj.weight")),
                    b_proj: take1(t, &format!("{p}mlp.c_proj.bias")),
                }
            })
            .collect();
        let wte = take2(t, "wte.weight");
        let wpe = take2(t, "wpe.weight");
        let lnf_scale = take1(t, "ln_f.weight");
        let lnf_bias = take1(t, "ln_f.bias");

        Ok(Self {
            config,
            wte,
            wpe,
            layers,
            lnf_scale,
            lnf_bias,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Exports every parameter under its canonical checkpoint name.
    pub fn to_tensors(&self) -> BTreeMap<String, NamedTensor> {
        fn t1(a: &Array1<f32>) -> NamedTensor {
            NamedTensor {
                shape: vec![a.len()],
                data: a.to_vec(),
            }
        }
        fn t2(a: &Array2<f32>) -> NamedTensor {
            NamedTensor {
                shape: a.shape().to_vec(),
                data: a.iter().copied().collect(),
            }
        }
        let mut out = BTreeMap::new();
        out.insert("wte.weight".into(), t2(&self.wte));
        out.insert("wpe.weight".into(), t2(&self.wpe));
        for (i, l) in self.layers.iter().enumerate() {
            let p = format!("h.{i}.");
            out.insert(format!("{p}ln_1.weight"), t1(&l.ln1_scale));
            out.insert(format!("{p}ln_1.bias"), t1(&l.ln1_bias));
            out.insert(format!("{p}attn.c_attn.weight"), t2(&l.w_qkv));
            out.insert(format!("{p}attn.c_attn.bias"), t1(&l.b_qkv));
            out.insert(format!("{p}attn.c_proj.weight"), t2(&l.w_out));
            out.insert(format!("{p}attn.c_proj.bias"), t1(&l.b_out));
            out.insert(format!("{p}ln_2.weight"), t1(&l.ln2_scale));
            out.insert(format!("{p}ln_2.bias"), t1(&l.ln2_bias));
            out.insert(format!("{p}mlp.c_fc.weight"), t2(&l.w_fc));
            out.insert(format!("{p}mlp.c_fc.bias"), t1(&l.b_fc));
            out.insert(format!("{p}mlp.c_proj.weight"), t2(&l.w_proj));
            out.insert(format!("{p}mlp.c_proj.bias"), t1(&l.b_proj));
        }
        out.insert("ln_f.weight".into(), t1(&self.lnf_scale));
        out.insert("ln_f.bias".into(), t1(&self.lnf_bias));
        out
    }

    /// Writes the store as an F32 safetensors file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tensors = self.to_tensors();
        let bytes: Vec<(String, Vec<u8>, Vec<usize>)> = tensors
            .into_iter()
            .map(|(name, t)| {
                let raw = t.data.iter().flat_map(|v| v.to_le_bytes()).collect();
                (name, raw, t.shape)
            })
            .collect();
        let views = bytes
            .iter()
            .map(|(name, raw, shape)| {
                TensorView::new(Dtype::F32, shape.clone(), raw)
                    .map(|v| (name.clone(), v))
                    .map_err(|e| Error::WeightFormat(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let out = safetensors::tensor::serialize(views, None).map_err(|e| Error::WeightFormat(e.to_string()))?;
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Deterministic random parameters, for tests, benchmarks and smoke runs.
    ///
    /// Matrices are uniform in `[-scale, scale]`; layer-norm scales sit near 1.
    pub fn random(config: &ModelConfig, seed: u64, scale: f32) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for (name, shape) in expected_shapes(config) {
            let n: usize = shape.iter().product();
            let data: Vec<f32> = if name.contains("ln_") && name.ends_with("weight") {
                (0..n).map(|_| 1.0 + rng.random_range(-0.2..0.2f32)).collect()
            } else if name.ends_with("bias") {
                (0..n).map(|_| rng.random_range(-0.1..0.1f32)).collect()
            } else {
                (0..n).map(|_| rng.random_range(-scale..scale)).collect()
            };
            tensors.insert(name, NamedTensor { shape, data });
        }
        Self::from_tensors(config.clone(), tensors)
    }

    /// Row `id` of the tied unembedding.
    pub(crate) fn unembed_row(&self, id: u32) -> ndarray::ArrayView1<'_, f32> {
        self.wte.index_axis(Axis(0), id as usize)
    }

    /// Output-projection rows belonging to `head`: `[d_head, d_model]`.
    pub(crate) fn head_out_proj(&self, layer: usize, head: usize) -> ArrayView2<'_, f32> {
        let dh = self.config.d_head;
        self.layers[layer]
            .w_out
            .slice(ndarray::s![head * dh..(head + 1) * dh, ..])
    }
}
