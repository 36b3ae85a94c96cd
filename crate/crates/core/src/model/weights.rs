//! Parameter storage. Matrices can be held in f32 or in a 16-bit float
//! format; every kernel upcasts elements to f32 on read and accumulates in
//! f64, so the storage mode only affects memory and weight rounding.
//! Norm weights and biases are always kept in f32.

use half::{bf16, f16};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::config::{MlpKind, ModelConfig, NormKind, PositionEncoding};
use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    /// f32 storage everywhere.
    Full,
    /// 16-bit storage for matrices, upcast to f32 per element on use.
    Half,
}

impl std::str::FromStr for Precision {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" | "f32" => Ok(Precision::Full),
            "half" | "f16" => Ok(Precision::Half),
            other => Err(format!("unknown precision `{other}`")),
        }
    }
}

/// Two-dimensional parameter, stored `[out_features, in_features]`.
#[derive(Debug, Clone)]
pub enum Param2 {
    F32(Array2<f32>),
    F16(Array2<f16>),
    Bf16(Array2<bf16>),
}

impl Param2 {
    pub fn shape(&self) -> (usize, usize) {
        let d = match self {
            Param2::F32(a) => a.dim(),
            Param2::F16(a) => a.dim(),
            Param2::Bf16(a) => a.dim(),
        };
        d
    }

    pub fn row_f32(&self, row: usize) -> Vec<f32> {
        match self {
            Param2::F32(a) => a.row(row).to_vec(),
            Param2::F16(a) => a.row(row).iter().map(|v| v.to_f32()).collect(),
            Param2::Bf16(a) => a.row(row).iter().map(|v| v.to_f32()).collect(),
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        match self {
            Param2::F32(a) => a[(row, col)],
            Param2::F16(a) => a[(row, col)].to_f32(),
            Param2::Bf16(a) => a[(row, col)].to_f32(),
        }
    }

    pub fn to_f32_array(&self) -> Array2<f32> {
        match self {
            Param2::F32(a) => a.clone(),
            Param2::F16(a) => a.mapv(|v| v.to_f32()),
            Param2::Bf16(a) => a.mapv(|v| v.to_f32()),
        }
    }

    /// Convert to the given storage precision. Full upcasts 16-bit storage
    /// to f32; Half rounds f32 storage to f16 (existing 16-bit storage is
    /// kept as-is).
    pub fn into_precision(self, precision: Precision) -> Param2 {
        match (self, precision) {
            (Param2::F32(a), Precision::Half) => Param2::F16(a.mapv(f16::from_f32)),
            (p @ (Param2::F16(_) | Param2::Bf16(_)), Precision::Half) => p,
            (p @ Param2::F32(_), Precision::Full) => p,
            (p, Precision::Full) => Param2::F32(p.to_f32_array()),
        }
    }
}

/// Normalization weights; bias present only for LayerNorm.
#[derive(Debug, Clone)]
pub struct NormWeights {
    pub weight: Array1<f32>,
    pub bias: Option<Array1<f32>>,
}

#[derive(Debug, Clone)]
pub enum MlpWeights {
    GatedSilu { gate: Param2, up: Param2, down: Param2 },
    Gelu { fc_in: Param2, fc_in_bias: Option<Array1<f32>>, fc_out: Param2, fc_out_bias: Option<Array1<f32>> },
}

#[derive(Debug, Clone)]
pub struct LayerWeights {
    pub attn_norm: NormWeights,
    pub wq: Param2,
    pub wk: Param2,
    pub wv: Param2,
    pub wo: Param2,
    pub bq: Option<Array1<f32>>,
    pub bk: Option<Array1<f32>>,
    pub bv: Option<Array1<f32>>,
    pub mlp_norm: NormWeights,
    pub mlp: MlpWeights,
}

#[derive(Debug, Clone)]
pub struct ModelWeights {
    /// Token embedding table `[vocab_size, d_model]`.
    pub embedding: Param2,
    /// Learned position table `[max_seq_len, d_model]`; present iff the
    /// config uses learned position encoding.
    pub pos_embedding: Option<Param2>,
    pub layers: Vec<LayerWeights>,
    pub final_norm: NormWeights,
    /// Unembedding `[vocab_size, d_model]`.
    pub unembedding: Param2,
}

impl ModelWeights {
    pub fn into_precision(self, precision: Precision) -> ModelWeights {
        ModelWeights {
            embedding: self.embedding.into_precision(precision),
            pos_embedding: self.pos_embedding.map(|p| p.into_precision(precision)),
            layers: self
                .layers
                .into_iter()
                .map(|l| LayerWeights {
                    attn_norm: l.attn_norm,
                    wq: l.wq.into_precision(precision),
                    wk: l.wk.into_precision(precision),
                    wv: l.wv.into_precision(precision),
                    wo: l.wo.into_precision(precision),
                    bq: l.bq,
                    bk: l.bk,
                    bv: l.bv,
                    mlp_norm: l.mlp_norm,
                    mlp: match l.mlp {
                        MlpWeights::GatedSilu { gate, up, down } => MlpWeights::GatedSilu {
                            gate: gate.into_precision(precision),
                            up: up.into_precision(precision),
                            down: down.into_precision(precision),
                        },
                        MlpWeights::Gelu { fc_in, fc_in_bias, fc_out, fc_out_bias } => {
                            MlpWeights::Gelu {
                                fc_in: fc_in.into_precision(precision),
                                fc_in_bias,
                                fc_out: fc_out.into_precision(precision),
                                fc_out_bias,
                            }
                        }
                    },
                })
                .collect(),
            final_norm: self.final_norm,
            unembedding: self.unembedding.into_precision(precision),
        }
    }

    /// Cross-check every tensor shape against the config. Errors name the
    /// offending tensor.
    pub fn check_shapes(&self, config: &ModelConfig) -> Result<(), ModelError> {
        let d = config.d_model;
        let check2 = |name: String, param: &Param2, expect: (usize, usize)| {
            let got = param.shape();
            if got != expect {
                return Err(ModelError::ShapeMismatch {
                    tensor: name,
                    expected: vec![expect.0, expect.1],
                    got: vec![got.0, got.1],
                });
            }
            Ok(())
        };
        let check1 = |name: String, arr: &Array1<f32>, expect: usize| {
            if arr.len() != expect {
                return Err(ModelError::ShapeMismatch {
                    tensor: name,
                    expected: vec![expect],
                    got: vec![arr.len()],
                });
            }
            Ok(())
        };
        let check_norm = |name: &str, norm: &NormWeights| -> Result<(), ModelError> {
            check1(format!("{name}.weight"), &norm.weight, d)?;
            match (&norm.bias, config.norm_kind) {
                (Some(b), NormKind::Layernorm) => check1(format!("{name}.bias"), b, d),
                (None, NormKind::Layernorm) => {
                    Err(ModelError::MissingTensor(format!("{name}.bias")))
                }
                (Some(_), NormKind::Rmsnorm) => Err(ModelError::InvalidConfig(format!(
                    "{name}.bias is not used by rmsnorm"
                ))),
                (None, NormKind::Rmsnorm) => Ok(()),
            }
        };

        check2("embedding".into(), &self.embedding, (config.vocab_size, d))?;
        match (&self.pos_embedding, config.position_encoding) {
            (Some(p), PositionEncoding::Learned) => {
                check2("pos_embedding".into(), p, (config.max_seq_len, d))?
            }
            (None, PositionEncoding::Learned) => {
                return Err(ModelError::MissingTensor("pos_embedding".into()))
            }
            (Some(_), PositionEncoding::Rotary) => {
                return Err(ModelError::InvalidConfig(
                    "pos_embedding is not used with rotary encoding".into(),
                ))
            }
            (None, PositionEncoding::Rotary) => {}
        }

        if self.layers.len() != config.n_layers {
            return Err(ModelError::InvalidConfig(format!(
                "expected {} layers, found {}",
                config.n_layers,
                self.layers.len()
            )));
        }
        let kv = config.kv_dim();
        for (i, layer) in self.layers.iter().enumerate() {
            check_norm(&format!("layers.{i}.attn_norm"), &layer.attn_norm)?;
            check2(format!("layers.{i}.attn.wq"), &layer.wq, (d, d))?;
            check2(format!("layers.{i}.attn.wk"), &layer.wk, (kv, d))?;
            check2(format!("layers.{i}.attn.wv"), &layer.wv, (kv, d))?;
            check2(format!("layers.{i}.attn.wo"), &layer.wo, (d, d))?;
            if let Some(b) = &layer.bq {
                check1(format!("layers.{i}.attn.bq"), b, d)?;
            }
            if let Some(b) = &layer.bk {
                check1(format!("layers.{i}.attn.bk"), b, kv)?;
            }
            if let Some(b) = &layer.bv {
                check1(format!("layers.{i}.attn.bv"), b, kv)?;
            }
            check_norm(&format!("layers.{i}.mlp_norm"), &layer.mlp_norm)?;
            match (&layer.mlp, config.mlp_kind) {
                (MlpWeights::GatedSilu { gate, up, down }, MlpKind::GatedSilu) => {
                    check2(format!("layers.{i}.mlp.gate"), gate, (config.d_mlp, d))?;
                    check2(format!("layers.{i}.mlp.up"), up, (config.d_mlp, d))?;
                    check2(format!("layers.{i}.mlp.down"), down, (d, config.d_mlp))?;
                }
                (MlpWeights::Gelu { fc_in, fc_in_bias, fc_out, fc_out_bias }, MlpKind::Gelu) => {
                    check2(format!("layers.{i}.mlp.fc_in"), fc_in, (config.d_mlp, d))?;
                    check2(format!("layers.{i}.mlp.fc_out"), fc_out, (d, config.d_mlp))?;
                    if let Some(b) = fc_in_bias {
                        check1(format!("layers.{i}.mlp.fc_in_bias"), b, config.d_mlp)?;
                    }
                    if let Some(b) = fc_out_bias {
                        check1(format!("layers.{i}.mlp.fc_out_bias"), b, d)?;
                    }
                }
                _ => {
                    return Err(ModelError::InvalidConfig(format!(
                        "layers.{i}.mlp weights do not match mlp_kind {:?}",
                        config.mlp_kind
                    )))
                }
            }
        }
        check_norm("final_norm", &self.final_norm)?;
        check2("unembedding".into(), &self.unembedding, (config.vocab_size, d))?;
        Ok(())
    }
}
