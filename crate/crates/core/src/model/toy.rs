//! Deterministic toy-model generator for desk-scale experiments and tests.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{MlpKind, ModelConfig, NormKind, PositionEncoding};
use super::weights::{LayerWeights, MlpWeights, ModelWeights, NormWeights, Param2, Precision};
use super::{ModelBundle, ModelError};
use crate::text::{TemplateId, Tokenizer, ToyTokenizer};

fn sample_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, std: f32) -> Param2 {
    let dist = Normal::new(0.0f32, std).expect("valid normal");
    let data: Vec<f32> = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Param2::F32(Array2::from_shape_vec((rows, cols), data).expect("shape matches"))
}

fn norm_weights(d: usize, kind: NormKind) -> NormWeights {
    NormWeights {
        weight: Array1::ones(d),
        bias: match kind {
            NormKind::Layernorm => Some(Array1::zeros(d)),
            NormKind::Rmsnorm => None,
        },
    }
}

/// Build a toy model with seed-deterministic weights and a byte-level toy
/// tokenizer. The same seed yields a bit-identical bundle.
pub fn make_toy_model(seed: u64, config: &ModelConfig) -> Result<ModelBundle, ModelError> {
    config.validate()?;
    if config.vocab_size < 32 {
        return Err(ModelError::InvalidConfig(
            "toy models need vocab_size >= 32 to cover the toy alphabet".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = config.d_model;
    let proj_std = 0.5 / (d as f32).sqrt();
    let down_std = 0.5 / (config.d_mlp as f32).sqrt();

    let embedding = sample_matrix(&mut rng, config.vocab_size, d, 1.0);
    let pos_embedding = match config.position_encoding {
        PositionEncoding::Learned => Some(sample_matrix(&mut rng, config.max_seq_len, d, 0.3)),
        PositionEncoding::Rotary => None,
    };

    let mut layers = Vec::with_capacity(config.n_layers);
    for _ in 0..config.n_layers {
        let kv = config.kv_dim();
        let mlp = match config.mlp_kind {
            MlpKind::GatedSilu => MlpWeights::GatedSilu {
                gate: sample_matrix(&mut rng, config.d_mlp, d, proj_std),
                up: sample_matrix(&mut rng, config.d_mlp, d, proj_std),
                down: sample_matrix(&mut rng, d, config.d_mlp, down_std),
            },
            MlpKind::Gelu => MlpWeights::Gelu {
                fc_in: sample_matrix(&mut rng, config.d_mlp, d, proj_std),
                fc_in_bias: Some(Array1::zeros(config.d_mlp)),
                fc_out: sample_matrix(&mut rng, d, config.d_mlp, down_std),
                fc_out_bias: Some(Array1::zeros(d)),
            },
        };
        layers.push(LayerWeights {
            attn_norm: norm_weights(d, config.norm_kind),
            wq: sample_matrix(&mut rng, d, d, proj_std),
            wk: sample_matrix(&mut rng, kv, d, proj_std),
            wv: sample_matrix(&mut rng, kv, d, proj_std),
            wo: sample_matrix(&mut rng, d, d, proj_std),
            bq: None,
            bk: None,
            bv: None,
            mlp_norm: norm_weights(d, config.norm_kind),
            mlp,
        });
    }

    let weights = ModelWeights {
        embedding,
        pos_embedding,
        layers,
        final_norm: norm_weights(d, config.norm_kind),
        unembedding: sample_matrix(&mut rng, config.vocab_size, d, 2.0 / (d as f32).sqrt()),
    };

    let tokenizer = Tokenizer::Toy(ToyTokenizer::new(config.vocab_size));
    ModelBundle::new(config.clone(), weights, tokenizer, TemplateId::Raw, Precision::Full)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ForwardRequest;

    fn logits_for(bundle: &ModelBundle, text: &str) -> Vec<f32> {
        let tokens = bundle.tokenizer().encode(text).unwrap();
        let mask = vec![true; tokens.len()];
        bundle.forward(&ForwardRequest::new(&tokens, &mask)).unwrap().logits
    }

    #[test]
    fn same_seed_same_logits() {
        let cfg = ModelConfig::toy(4, 64, 4, 4, 128, 64);
        let a = make_toy_model(7, &cfg).unwrap();
        let b = make_toy_model(7, &cfg).unwrap();
        assert_eq!(logits_for(&a, "hello there"), logits_for(&b, "hello there"));
    }

    #[test]
    fn different_seed_different_logits() {
        let cfg = ModelConfig::toy(4, 64, 4, 4, 128, 64);
        let a = make_toy_model(7, &cfg).unwrap();
        let b = make_toy_model(8, &cfg).unwrap();
        assert_ne!(logits_for(&a, "hello there"), logits_for(&b, "hello there"));
    }

    #[test]
    fn rotary_gqa_bundle_forwards() {
        let cfg = ModelConfig::toy(2, 32, 4, 2, 64, 64);
        let bundle = make_toy_model(11, &cfg).unwrap();
        let logits = logits_for(&bundle, "ab cd");
        assert_eq!(logits.len(), 64);
        assert!(logits.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn tiny_vocab_is_rejected() {
        let cfg = ModelConfig::toy(1, 16, 2, 2, 32, 16);
        assert!(make_toy_model(0, &cfg).is_err());
    }
}
