//! Minimal decoder-only transformer with named residual-stream hook points,
//! weight-file ingestion, and a deterministic toy-model generator.

mod attention;
mod config;
mod forward;
mod io;
mod math;
mod toy;
mod weights;

pub use attention::{grouped_attention, mha_attention};
pub use config::{MlpKind, ModelConfig, NormKind, PositionEncoding};
pub use forward::{
    ActivationCache, AttentionPath, EditMode, ForwardRecord, ForwardRequest, HookKind, HookPoint,
    PositionSelector, ResidualEdit,
};
pub use io::{load_model, save_model, ModelFamily};
pub use toy::make_toy_model;
pub use weights::{LayerWeights, MlpWeights, ModelWeights, NormWeights, Param2, Precision};

use thiserror::Error;

use crate::text::{TemplateId, TextError, Tokenizer};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("missing tensor `{0}`")]
    MissingTensor(String),
    #[error("tensor `{tensor}` has shape {got:?}, expected {expected:?}")]
    ShapeMismatch { tensor: String, expected: Vec<usize>, got: Vec<usize> },
    #[error("unsupported architecture feature: {0}")]
    UnsupportedFeature(String),
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("weight file {path}: {reason}")]
    WeightFile { path: String, reason: String },
    #[error("config descriptor {path}: {reason}")]
    ConfigDescriptor { path: String, reason: String },
    #[error("tokenizer vocabulary ({tokenizer}) exceeds model vocab size ({model})")]
    TokenizerVocab { tokenizer: usize, model: usize },
    #[error(transparent)]
    Text(#[from] TextError),

    #[error("empty token sequence")]
    EmptyInput,
    #[error("mask length {mask} does not match token length {tokens}")]
    MaskLength { tokens: usize, mask: usize },
    #[error("sequence length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("token id {id} at index {index} is out of range for vocab size {vocab_size}")]
    TokenOutOfRange { index: usize, id: u32, vocab_size: usize },
    #[error("hook layer {layer} is out of range for {n_layers} layers")]
    HookOutOfRange { layer: usize, n_layers: usize },
    #[error("hook or edit position out of range for sequence length {seq_len}")]
    PositionOutOfRange { seq_len: usize },
    #[error("edit vector has length {got}, expected d_model {want}")]
    EditDimension { got: usize, want: usize },
    #[error("edit vector at layer {layer}, position {position} contains a non-finite value")]
    NonFiniteEdit { layer: usize, position: usize },
    #[error("logits contain a non-finite value at index {index}")]
    NonFiniteLogits { index: usize },
}

/// An immutable, shareable model: architecture config, weights, tokenizer,
/// and chat-template binding. All tensor shapes are cross-checked against
/// the config at construction.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    config: ModelConfig,
    weights: ModelWeights,
    tokenizer: Tokenizer,
    chat_template_id: TemplateId,
    precision: Precision,
}

impl ModelBundle {
    pub fn new(
        config: ModelConfig,
        weights: ModelWeights,
        tokenizer: Tokenizer,
        chat_template_id: TemplateId,
        precision: Precision,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        weights.check_shapes(&config)?;
        if tokenizer.vocab_len() > config.vocab_size {
            return Err(ModelError::TokenizerVocab {
                tokenizer: tokenizer.vocab_len(),
                model: config.vocab_size,
            });
        }
        Ok(ModelBundle { config, weights, tokenizer, chat_template_id, precision })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &ModelWeights {
        &self.weights
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn chat_template_id(&self) -> TemplateId {
        self.chat_template_id
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    /// Rebuild the bundle with a different storage precision.
    pub fn into_precision(self, precision: Precision) -> ModelBundle {
        ModelBundle {
            config: self.config,
            weights: self.weights.into_precision(precision),
            tokenizer: self.tokenizer,
            chat_template_id: self.chat_template_id,
            precision,
        }
    }
}
