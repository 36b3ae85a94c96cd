//! Architecture configuration for pre-norm decoder-only transformers.

use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionEncoding {
    Rotary,
    Learned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Rmsnorm,
    Layernorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MlpKind {
    GatedSilu,
    Gelu,
}

fn default_rope_base() -> f64 {
    10_000.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    /// Equals `n_heads` for multi-head attention; divides `n_heads` for
    /// grouped-query attention.
    pub n_kv_heads: usize,
    pub d_mlp: usize,
    pub vocab_size: usize,
    pub position_encoding: PositionEncoding,
    pub norm_kind: NormKind,
    pub mlp_kind: MlpKind,
    pub max_seq_len: usize,
    pub norm_eps: f32,
    /// Base of the rotary frequency schedule; per-family configurable.
    #[serde(default = "default_rope_base")]
    pub rope_base: f64,
}

impl ModelConfig {
    /// Shorthand for toy-model configs: rotary + RMSNorm + gated-SiLU MLP.
    pub fn toy(
        n_layers: usize,
        d_model: usize,
        n_heads: usize,
        n_kv_heads: usize,
        d_mlp: usize,
        vocab_size: usize,
    ) -> Self {
        ModelConfig {
            n_layers,
            d_model,
            n_heads,
            n_kv_heads,
            d_mlp,
            vocab_size,
            position_encoding: PositionEncoding::Rotary,
            norm_kind: NormKind::Rmsnorm,
            mlp_kind: MlpKind::GatedSilu,
            max_seq_len: 512,
            norm_eps: 1e-5,
            rope_base: default_rope_base(),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn kv_dim(&self) -> usize {
        self.n_kv_heads * self.head_dim()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_kv_heads", self.n_kv_heads),
            ("d_mlp", self.d_mlp),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(ModelError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !(self.norm_eps > 0.0) {
            return Err(ModelError::InvalidConfig("norm_eps must be positive".into()));
        }
        if self.n_heads % self.n_kv_heads != 0 {
            return Err(ModelError::InvalidConfig("n_kv_heads must divide n_heads".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(ModelError::InvalidConfig("n_heads must divide d_model".into()));
        }
        if self.position_encoding == PositionEncoding::Rotary && self.head_dim() % 2 != 0 {
            return Err(ModelError::InvalidConfig(
                "rotary encoding requires an even head dimension".into(),
            ));
        }
        Ok(())
    }
}
