//! Weight ingestion and serialization.
//!
//! A model directory holds a safetensors weight file plus a small JSON config
//! descriptor. Two layouts are recognized:
//!
//! - the native layout written by [`save_model`] (tensor names like
//!   `layers.3.attn.wq`, config descriptor with a `format` tag); toy models
//!   serialize to this layout.
//! - Hugging-Face-style `llama` / `qwen2` checkpoint directories
//!   (`model.safetensors` or an index plus shards, `config.json`,
//!   `tokenizer.json`), with the documented field mapping below.
//!
//! Family field mapping (llama/qwen2 → native):
//! `model.embed_tokens.weight` → embedding;
//! `model.layers.{i}.input_layernorm.weight` → attn_norm;
//! `self_attn.{q,k,v,o}_proj.weight` → wq/wk/wv/wo (qwen2 adds q/k/v biases);
//! `model.layers.{i}.post_attention_layernorm.weight` → mlp_norm;
//! `mlp.{gate,up,down}_proj.weight` → gated-SiLU MLP;
//! `model.norm.weight` → final_norm;
//! `lm_head.weight` → unembedding (falls back to the embedding when weights
//! are tied).

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use half::{bf16, f16};
use ndarray::{Array1, Array2};
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;
use serde::{Deserialize, Serialize};

use super::config::{MlpKind, ModelConfig, NormKind, PositionEncoding};
use super::weights::{LayerWeights, MlpWeights, ModelWeights, NormWeights, Param2, Precision};
use super::{ModelBundle, ModelError};
use crate::text::{BpeTokenizer, TemplateId, Tokenizer, ToyTokenizer};

const FORMAT_TAG: &str = "vallens.model.v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelFamily {
    Native,
    Llama,
    Qwen2,
}

impl std::str::FromStr for ModelFamily {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "native" => Ok(ModelFamily::Native),
            "llama" => Ok(ModelFamily::Llama),
            "qwen2" => Ok(ModelFamily::Qwen2),
            other => Err(format!("unknown model family `{other}`")),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum TokenizerSpec {
    Toy { alphabet: String },
    Bpe { file: String },
}

#[derive(Debug, Serialize, Deserialize)]
struct SidecarConfig {
    format: String,
    model: ModelConfig,
    tokenizer: TokenizerSpec,
    chat_template: TemplateId,
}

fn read_err(path: &Path, source: std::io::Error) -> ModelError {
    ModelError::Io { path: path.display().to_string(), source }
}

// ---------------------------------------------------------------------------
// Tensor <-> byte conversion
// ---------------------------------------------------------------------------

fn f32_bytes(data: &[f32]) -> Vec<u8> {
    data.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn param_bytes(param: &Param2) -> (Dtype, Vec<usize>, Vec<u8>) {
    match param {
        Param2::F32(a) => {
            (Dtype::F32, vec![a.nrows(), a.ncols()], f32_bytes(a.as_slice().unwrap()))
        }
        Param2::F16(a) => (
            Dtype::F16,
            vec![a.nrows(), a.ncols()],
            a.iter().flat_map(|v| v.to_le_bytes()).collect(),
        ),
        Param2::Bf16(a) => (
            Dtype::BF16,
            vec![a.nrows(), a.ncols()],
            a.iter().flat_map(|v| v.to_le_bytes()).collect(),
        ),
    }
}

fn vec_f32_from_le(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

fn view_to_param2(name: &str, view: &TensorView) -> Result<Param2, ModelError> {
    let shape = view.shape();
    if shape.len() != 2 {
        return Err(ModelError::ShapeMismatch {
            tensor: name.to_string(),
            expected: vec![0, 0],
            got: shape.to_vec(),
        });
    }
    let (rows, cols) = (shape[0], shape[1]);
    let data = view.data();
    let mk_shape_err = || ModelError::WeightFile {
        path: name.to_string(),
        reason: "tensor byte length does not match its shape".into(),
    };
    match view.dtype() {
        Dtype::F32 => {
            let values = vec_f32_from_le(data);
            Array2::from_shape_vec((rows, cols), values)
                .map(Param2::F32)
                .map_err(|_| mk_shape_err())
        }
        Dtype::F16 => {
            let values: Vec<f16> = data
                .chunks_exact(2)
                .map(|c| f16::from_le_bytes([c[0], c[1]]))
                .collect();
            Array2::from_shape_vec((rows, cols), values)
                .map(Param2::F16)
                .map_err(|_| mk_shape_err())
        }
        Dtype::BF16 => {
            let values: Vec<bf16> = data
                .chunks_exact(2)
                .map(|c| bf16::from_le_bytes([c[0], c[1]]))
                .collect();
            Array2::from_shape_vec((rows, cols), values)
                .map(Param2::Bf16)
                .map_err(|_| mk_shape_err())
        }
        other => Err(ModelError::UnsupportedFeature(format!(
            "dtype {other:?} for tensor `{name}`"
        ))),
    }
}

fn view_to_vector(name: &str, view: &TensorView) -> Result<Array1<f32>, ModelError> {
    if view.shape().len() != 1 {
        return Err(ModelError::ShapeMismatch {
            tensor: name.to_string(),
            expected: vec![0],
            got: view.shape().to_vec(),
        });
    }
    let data = view.data();
    let values: Vec<f32> = match view.dtype() {
        Dtype::F32 => vec_f32_from_le(data),
        Dtype::F16 => data
            .chunks_exact(2)
            .map(|c| f16::from_le_bytes([c[0], c[1]]).to_f32())
            .collect(),
        Dtype::BF16 => data
            .chunks_exact(2)
            .map(|c| bf16::from_le_bytes([c[0], c[1]]).to_f32())
            .collect(),
        other => {
            return Err(ModelError::UnsupportedFeature(format!(
                "dtype {other:?} for tensor `{name}`"
            )))
        }
    };
    Ok(Array1::from(values))
}

// ---------------------------------------------------------------------------
// Saving (native layout)
// ---------------------------------------------------------------------------

fn native_tensor_list(weights: &ModelWeights) -> Vec<(String, &Param2)> {
    let mut out: Vec<(String, &Param2)> = vec![("embedding".into(), &weights.embedding)];
    if let Some(p) = &weights.pos_embedding {
        out.push(("pos_embedding".into(), p));
    }
    for (i, layer) in weights.layers.iter().enumerate() {
        out.push((format!("layers.{i}.attn.wq"), &layer.wq));
        out.push((format!("layers.{i}.attn.wk"), &layer.wk));
        out.push((format!("layers.{i}.attn.wv"), &layer.wv));
        out.push((format!("layers.{i}.attn.wo"), &layer.wo));
        match &layer.mlp {
            MlpWeights::GatedSilu { gate, up, down } => {
                out.push((format!("layers.{i}.mlp.gate"), gate));
                out.push((format!("layers.{i}.mlp.up"), up));
                out.push((format!("layers.{i}.mlp.down"), down));
            }
            MlpWeights::Gelu { fc_in, fc_out, .. } => {
                out.push((format!("layers.{i}.mlp.fc_in"), fc_in));
                out.push((format!("layers.{i}.mlp.fc_out"), fc_out));
            }
        }
    }
    out.push(("unembedding".into(), &weights.unembedding));
    out
}

fn native_vector_list(weights: &ModelWeights) -> Vec<(String, &Array1<f32>)> {
    let mut out: Vec<(String, &Array1<f32>)> = Vec::new();
    for (i, layer) in weights.layers.iter().enumerate() {
        out.push((format!("layers.{i}.attn_norm.weight"), &layer.attn_norm.weight));
        if let Some(b) = &layer.attn_norm.bias {
            out.push((format!("layers.{i}.attn_norm.bias"), b));
        }
        for (suffix, bias) in [("bq", &layer.bq), ("bk", &layer.bk), ("bv", &layer.bv)] {
            if let Some(b) = bias {
                out.push((format!("layers.{i}.attn.{suffix}"), b));
            }
        }
        out.push((format!("layers.{i}.mlp_norm.weight"), &layer.mlp_norm.weight));
        if let Some(b) = &layer.mlp_norm.bias {
            out.push((format!("layers.{i}.mlp_norm.bias"), b));
        }
        if let MlpWeights::Gelu { fc_in_bias, fc_out_bias, .. } = &layer.mlp {
            if let Some(b) = fc_in_bias {
                out.push((format!("layers.{i}.mlp.fc_in_bias"), b));
            }
            if let Some(b) = fc_out_bias {
                out.push((format!("layers.{i}.mlp.fc_out_bias"), b));
            }
        }
    }
    out.push(("final_norm.weight".into(), &weights.final_norm.weight));
    if let Some(b) = &weights.final_norm.bias {
        out.push(("final_norm.bias".into(), b));
    }
    out
}

/// Write `bundle` into `dir` as `model.safetensors` plus `config.json`.
pub fn save_model(bundle: &ModelBundle, dir: &Path) -> Result<(), ModelError> {
    std::fs::create_dir_all(dir).map_err(|e| read_err(dir, e))?;

    let mut raw: Vec<(String, Dtype, Vec<usize>, Vec<u8>)> = Vec::new();
    for (name, param) in native_tensor_list(bundle.weights()) {
        let (dtype, shape, bytes) = param_bytes(param);
        raw.push((name, dtype, shape, bytes));
    }
    for (name, vector) in native_vector_list(bundle.weights()) {
        raw.push((name, Dtype::F32, vec![vector.len()], f32_bytes(vector.as_slice().unwrap())));
    }
    raw.sort_by(|a, b| a.0.cmp(&b.0));

    let views: Vec<(String, TensorView)> = raw
        .iter()
        .map(|(name, dtype, shape, bytes)| {
            let view = TensorView::new(*dtype, shape.clone(), bytes).expect("consistent tensor");
            (name.clone(), view)
        })
        .collect();
    let weights_path = dir.join("model.safetensors");
    let blob = safetensors::serialize(views, None).map_err(|e| ModelError::WeightFile {
        path: weights_path.display().to_string(),
        reason: e.to_string(),
    })?;
    std::fs::write(&weights_path, blob).map_err(|e| read_err(&weights_path, e))?;

    let tokenizer_spec = match bundle.tokenizer() {
        Tokenizer::Toy(t) => TokenizerSpec::Toy { alphabet: t.alphabet().to_string() },
        Tokenizer::Bpe(_) => TokenizerSpec::Bpe { file: "tokenizer.json".into() },
    };
    let sidecar = SidecarConfig {
        format: FORMAT_TAG.to_string(),
        model: bundle.config().clone(),
        tokenizer: tokenizer_spec,
        chat_template: bundle.chat_template_id(),
    };
    let config_path = dir.join("config.json");
    let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    std::fs::write(&config_path, text).map_err(|e| read_err(&config_path, e))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

/// Weight shards mapped into memory with a tensor-name index.
struct ShardSet {
    buffers: Vec<Vec<u8>>,
    name_to_shard: HashMap<String, usize>,
}

impl ShardSet {
    fn open(dir: &Path) -> Result<Self, ModelError> {
        let index_path = dir.join("model.safetensors.index.json");
        let files: Vec<PathBuf> = if index_path.exists() {
            #[derive(Deserialize)]
            struct Index {
                weight_map: HashMap<String, String>,
            }
            let text = std::fs::read_to_string(&index_path).map_err(|e| read_err(&index_path, e))?;
            let index: Index =
                serde_json::from_str(&text).map_err(|e| ModelError::ConfigDescriptor {
                    path: index_path.display().to_string(),
                    reason: e.to_string(),
                })?;
            let mut files: Vec<String> = index.weight_map.values().cloned().collect();
            files.sort();
            files.dedup();
            files.into_iter().map(|f| dir.join(f)).collect()
        } else {
            vec![dir.join("model.safetensors")]
        };

        let mut buffers = Vec::with_capacity(files.len());
        let mut name_to_shard = HashMap::new();
        for (i, file) in files.iter().enumerate() {
            let bytes = std::fs::read(file).map_err(|e| read_err(file, e))?;
            {
                let st = SafeTensors::deserialize(&bytes).map_err(|e| ModelError::WeightFile {
                    path: file.display().to_string(),
                    reason: e.to_string(),
                })?;
                for name in st.names() {
                    name_to_shard.insert(name.to_string(), i);
                }
            }
            buffers.push(bytes);
        }
        Ok(ShardSet { buffers, name_to_shard })
    }

    fn param2(&self, name: &str) -> Result<Param2, ModelError> {
        let shard = *self
            .name_to_shard
            .get(name)
            .ok_or_else(|| ModelError::MissingTensor(name.to_string()))?;
        let st = SafeTensors::deserialize(&self.buffers[shard]).expect("validated on open");
        let view = st
            .tensor(name)
            .map_err(|_| ModelError::MissingTensor(name.to_string()))?;
        view_to_param2(name, &view)
    }

    fn vector(&self, name: &str) -> Result<Array1<f32>, ModelError> {
        let shard = *self
            .name_to_shard
            .get(name)
            .ok_or_else(|| ModelError::MissingTensor(name.to_string()))?;
        let st = SafeTensors::deserialize(&self.buffers[shard]).expect("validated on open");
        let view = st
            .tensor(name)
            .map_err(|_| ModelError::MissingTensor(name.to_string()))?;
        view_to_vector(name, &view)
    }

    fn vector_opt(&self, name: &str) -> Result<Option<Array1<f32>>, ModelError> {
        if self.name_to_shard.contains_key(name) {
            self.vector(name).map(Some)
        } else {
            Ok(None)
        }
    }

    fn has(&self, name: &str) -> bool {
        self.name_to_shard.contains_key(name)
    }
}

fn load_native(dir: &Path, sidecar: SidecarConfig) -> Result<ModelBundle, ModelError> {
    let config = sidecar.model;
    let shards = ShardSet::open(dir)?;

    let mut layers = Vec::with_capacity(config.n_layers);
    for i in 0..config.n_layers {
        let norm = |prefix: &str| -> Result<NormWeights, ModelError> {
            Ok(NormWeights {
                weight: shards.vector(&format!("{prefix}.weight"))?,
                bias: shards.vector_opt(&format!("{prefix}.bias"))?,
            })
        };
        let mlp = match config.mlp_kind {
            MlpKind::GatedSilu => MlpWeights::GatedSilu {
                gate: shards.param2(&format!("layers.{i}.mlp.gate"))?,
                up: shards.param2(&format!("layers.{i}.mlp.up"))?,
                down: shards.param2(&format!("layers.{i}.mlp.down"))?,
            },
            MlpKind::Gelu => MlpWeights::Gelu {
                fc_in: shards.param2(&format!("layers.{i}.mlp.fc_in"))?,
                fc_in_bias: shards.vector_opt(&format!("layers.{i}.mlp.fc_in_bias"))?,
                fc_out: shards.param2(&format!("layers.{i}.mlp.fc_out"))?,
                fc_out_bias: shards.vector_opt(&format!("layers.{i}.mlp.fc_out_bias"))?,
            },
        };
        layers.push(LayerWeights {
            attn_norm: norm(&format!("layers.{i}.attn_norm"))?,
            wq: shards.param2(&format!("layers.{i}.attn.wq"))?,
            wk: shards.param2(&format!("layers.{i}.attn.wk"))?,
            wv: shards.param2(&format!("layers.{i}.attn.wv"))?,
            wo: shards.param2(&format!("layers.{i}.attn.wo"))?,
            bq: shards.vector_opt(&format!("layers.{i}.attn.bq"))?,
            bk: shards.vector_opt(&format!("layers.{i}.attn.bk"))?,
            bv: shards.vector_opt(&format!("layers.{i}.attn.bv"))?,
            mlp_norm: norm(&format!("layers.{i}.mlp_norm"))?,
            mlp,
        });
    }

    let weights = ModelWeights {
        embedding: shards.param2("embedding")?,
        pos_embedding: if config.position_encoding == PositionEncoding::Learned {
            Some(shards.param2("pos_embedding")?)
        } else {
            None
        },
        layers,
        final_norm: NormWeights {
            weight: shards.vector("final_norm.weight")?,
            bias: shards.vector_opt("final_norm.bias")?,
        },
        unembedding: shards.param2("unembedding")?,
    };

    let tokenizer = match sidecar.tokenizer {
        TokenizerSpec::Toy { alphabet } => Tokenizer::Toy(ToyTokenizer::from_alphabet(alphabet)),
        TokenizerSpec::Bpe { file } => Tokenizer::Bpe(BpeTokenizer::from_file(&dir.join(file))?),
    };

    let precision = match weights.embedding {
        Param2::F32(_) => Precision::Full,
        _ => Precision::Half,
    };
    ModelBundle::new(config, weights, tokenizer, sidecar.chat_template, precision)
}

#[derive(Deserialize)]
struct HfConfig {
    num_hidden_layers: usize,
    hidden_size: usize,
    num_attention_heads: usize,
    #[serde(default)]
    num_key_value_heads: Option<usize>,
    intermediate_size: usize,
    vocab_size: usize,
    #[serde(default)]
    rms_norm_eps: Option<f32>,
    max_position_embeddings: usize,
    #[serde(default)]
    rope_theta: Option<f64>,
    #[serde(default)]
    tie_word_embeddings: bool,
    #[serde(default)]
    hidden_act: Option<String>,
}

fn load_hf_family(dir: &Path, family: ModelFamily) -> Result<ModelBundle, ModelError> {
    let config_path = dir.join("config.json");
    let text = std::fs::read_to_string(&config_path).map_err(|e| read_err(&config_path, e))?;
    let hf: HfConfig = serde_json::from_str(&text).map_err(|e| ModelError::ConfigDescriptor {
        path: config_path.display().to_string(),
        reason: e.to_string(),
    })?;
    if let Some(act) = &hf.hidden_act {
        if act != "silu" {
            return Err(ModelError::UnsupportedFeature(format!(
                "hidden_act `{act}` (only silu-gated MLPs are supported for this family)"
            )));
        }
    }

    let config = ModelConfig {
        n_layers: hf.num_hidden_layers,
        d_model: hf.hidden_size,
        n_heads: hf.num_attention_heads,
        n_kv_heads: hf.num_key_value_heads.unwrap_or(hf.num_attention_heads),
        d_mlp: hf.intermediate_size,
        vocab_size: hf.vocab_size,
        position_encoding: PositionEncoding::Rotary,
        norm_kind: NormKind::Rmsnorm,
        mlp_kind: MlpKind::GatedSilu,
        max_seq_len: hf.max_position_embeddings,
        norm_eps: hf.rms_norm_eps.unwrap_or(1e-6),
        rope_base: hf.rope_theta.unwrap_or(10_000.0),
    };

    let shards = ShardSet::open(dir)?;
    let mut layers = Vec::with_capacity(config.n_layers);
    for i in 0..config.n_layers {
        let p = format!("model.layers.{i}");
        layers.push(LayerWeights {
            attn_norm: NormWeights {
                weight: shards.vector(&format!("{p}.input_layernorm.weight"))?,
                bias: None,
            },
            wq: shards.param2(&format!("{p}.self_attn.q_proj.weight"))?,
            wk: shards.param2(&format!("{p}.self_attn.k_proj.weight"))?,
            wv: shards.param2(&format!("{p}.self_attn.v_proj.weight"))?,
            wo: shards.param2(&format!("{p}.self_attn.o_proj.weight"))?,
            bq: shards.vector_opt(&format!("{p}.self_attn.q_proj.bias"))?,
            bk: shards.vector_opt(&format!("{p}.self_attn.k_proj.bias"))?,
            bv: shards.vector_opt(&format!("{p}.self_attn.v_proj.bias"))?,
            mlp_norm: NormWeights {
                weight: shards.vector(&format!("{p}.post_attention_layernorm.weight"))?,
                bias: None,
            },
            mlp: MlpWeights::GatedSilu {
                gate: shards.param2(&format!("{p}.mlp.gate_proj.weight"))?,
                up: shards.param2(&format!("{p}.mlp.up_proj.weight"))?,
                down: shards.param2(&format!("{p}.mlp.down_proj.weight"))?,
            },
        });
    }

    let embedding = shards.param2("model.embed_tokens.weight")?;
    let unembedding = if shards.has("lm_head.weight") {
        shards.param2("lm_head.weight")?
    } else if hf.tie_word_embeddings {
        embedding.clone()
    } else {
        return Err(ModelError::MissingTensor("lm_head.weight".into()));
    };

    let weights = ModelWeights {
        embedding,
        pos_embedding: None,
        layers,
        final_norm: NormWeights { weight: shards.vector("model.norm.weight")?, bias: None },
        unembedding,
    };

    let tokenizer = Tokenizer::Bpe(BpeTokenizer::from_file(&dir.join("tokenizer.json"))?);
    let template = match family {
        ModelFamily::Llama => TemplateId::Llama3Instruct,
        ModelFamily::Qwen2 => TemplateId::Chatml,
        ModelFamily::Native => unreachable!(),
    };
    let precision = match weights.embedding {
        Param2::F32(_) => Precision::Full,
        _ => Precision::Half,
    };
    ModelBundle::new(config, weights, tokenizer, template, precision)
}

/// Load a model directory, detecting the layout from the config descriptor
/// unless `family_hint` forces one.
pub fn load_model(path: &Path, family_hint: Option<ModelFamily>) -> Result<ModelBundle, ModelError> {
    let config_path = path.join("config.json");
    let text = std::fs::read_to_string(&config_path).map_err(|e| read_err(&config_path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| ModelError::ConfigDescriptor {
            path: config_path.display().to_string(),
            reason: e.to_string(),
        })?;

    let family = match family_hint {
        Some(f) => f,
        None => {
            if value.get("format").and_then(|v| v.as_str()) == Some(FORMAT_TAG) {
                ModelFamily::Native
            } else {
                match value.get("model_type").and_then(|v| v.as_str()) {
                    Some("llama") => ModelFamily::Llama,
                    Some("qwen2") => ModelFamily::Qwen2,
                    Some(other) => {
                        return Err(ModelError::UnsupportedFeature(format!(
                            "model_type `{other}`"
                        )))
                    }
                    None => {
                        return Err(ModelError::ConfigDescriptor {
                            path: config_path.display().to_string(),
                            reason: "neither a native format tag nor a model_type field".into(),
                        })
                    }
                }
            }
        }
    };

    match family {
        ModelFamily::Native => {
            let sidecar: SidecarConfig =
                serde_json::from_str(&text).map_err(|e| ModelError::ConfigDescriptor {
                    path: config_path.display().to_string(),
                    reason: e.to_string(),
                })?;
            load_native(path, sidecar)
        }
        family => load_hf_family(path, family),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_toy_model, ForwardRequest};

    fn toy_bundle() -> ModelBundle {
        make_toy_model(7, &ModelConfig::toy(4, 32, 4, 2, 64, 64)).unwrap()
    }

    fn logits(bundle: &ModelBundle, text: &str) -> Vec<f32> {
        let tokens = bundle.tokenizer().encode(text).unwrap();
        let mask = vec![true; tokens.len()];
        bundle.forward(&ForwardRequest::new(&tokens, &mask)).unwrap().logits
    }

    #[test]
    fn save_load_round_trip_preserves_logits() {
        let dir = tempfile::tempdir().unwrap();
        let bundle = toy_bundle();
        save_model(&bundle, dir.path()).unwrap();
        let reloaded = load_model(dir.path(), None).unwrap();
        assert_eq!(reloaded.config(), bundle.config());
        assert_eq!(logits(&bundle, "round trip"), logits(&reloaded, "round trip"));
    }

    #[test]
    fn missing_unembedding_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let bundle = toy_bundle();
        save_model(&bundle, dir.path()).unwrap();

        // Rewrite the weight file without the unembedding tensor.
        let bytes = std::fs::read(dir.path().join("model.safetensors")).unwrap();
        let st = SafeTensors::deserialize(&bytes).unwrap();
        let kept: Vec<(String, TensorView)> = st
            .tensors()
            .into_iter()
            .filter(|(name, _)| name != "unembedding")
            .collect();
        let blob = safetensors::serialize(kept, None).unwrap();
        std::fs::write(dir.path().join("model.safetensors"), blob).unwrap();

        let err = load_model(dir.path(), None).unwrap_err();
        assert!(err.to_string().contains("unembedding"), "got: {err}");
    }

    #[test]
    fn shape_mismatch_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let bundle = toy_bundle();
        save_model(&bundle, dir.path()).unwrap();

        // Lie about n_layers in the sidecar so a shape/missing check fires.
        let config_path = dir.path().join("config.json");
        let text = std::fs::read_to_string(&config_path).unwrap();
        let mut sidecar: serde_json::Value = serde_json::from_str(&text).unwrap();
        sidecar["model"]["d_model"] = serde_json::json!(48);
        std::fs::write(&config_path, serde_json::to_string(&sidecar).unwrap()).unwrap();

        let err = load_model(dir.path(), None).unwrap_err();
        assert!(matches!(err, ModelError::ShapeMismatch { .. }), "got: {err}");
    }

    #[test]
    fn half_precision_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let bundle = toy_bundle().into_precision(Precision::Half);
        save_model(&bundle, dir.path()).unwrap();
        let reloaded = load_model(dir.path(), None).unwrap();
        assert_eq!(reloaded.precision(), Precision::Half);
        assert_eq!(logits(&bundle, "half mode"), logits(&reloaded, "half mode"));
    }

    #[test]
    fn unknown_model_type_is_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("config.json"), r#"{"model_type": "mamba"}"#).unwrap();
        let err = load_model(dir.path(), None).unwrap_err();
        assert!(matches!(err, ModelError::UnsupportedFeature(_)));
    }
}
