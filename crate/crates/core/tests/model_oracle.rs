//! Forward-pass correctness against the independent spliced-forward oracle,
//! plus the hook-machinery invariants.

mod common;

use common::oracle::{spliced_forward, OracleEdit};
use common::{max_abs_diff, random_text, toy_bundle, toy_bundle_with};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vallens::model::{
    AttentionPath, ForwardRequest, HookPoint, MlpKind, ModelConfig, NormKind, PositionEncoding,
    PositionSelector, ResidualEdit,
};

fn encode(bundle: &vallens::model::ModelBundle, text: &str) -> (Vec<u32>, Vec<bool>) {
    let tokens = bundle.tokenizer().encode(text).unwrap();
    let mask = vec![true; tokens.len()];
    (tokens, mask)
}

#[test]
fn plain_forward_matches_oracle() {
    let bundle = toy_bundle(7);
    let (tokens, mask) = encode(&bundle, "the cat sat on the mat");
    let record = bundle.forward(&ForwardRequest::new(&tokens, &mask)).unwrap();
    let oracle = spliced_forward(&bundle, &tokens, &mask, &[]);
    assert!(max_abs_diff(&record.logits, &oracle.logits) < 1e-6);
}

#[test]
fn replace_edit_matches_oracle_at_every_layer() {
    let bundle = toy_bundle(3);
    let (tokens, mask) = encode(&bundle, "patching test input");
    let d = bundle.config().d_model;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for layer in 0..bundle.config().n_layers {
        let vector: Vec<f32> = (0..d).map(|_| rng.gen_range(-2.0f32..2.0)).collect();
        let position = tokens.len() - 1;
        let record = bundle
            .forward(&ForwardRequest::new(&tokens, &mask).with_edits(vec![
                ResidualEdit::replace(layer, position, vector.clone()),
            ]))
            .unwrap();
        let oracle = spliced_forward(
            &bundle,
            &tokens,
            &mask,
            &[(layer, position, vector, OracleEdit::Replace)],
        );
        assert!(
            max_abs_diff(&record.logits, &oracle.logits) < 1e-6,
            "layer {layer} diverged from the spliced oracle"
        );
    }
}

#[test]
fn add_edit_matches_oracle() {
    let bundle = toy_bundle(5);
    let (tokens, mask) = encode(&bundle, "additive steering check");
    let d = bundle.config().d_model;
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let vector: Vec<f32> = (0..d).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    let layer = 2;
    let position = 4;
    let record = bundle
        .forward(&ForwardRequest::new(&tokens, &mask).with_edits(vec![ResidualEdit::add(
            layer,
            position,
            vector.clone(),
        )]))
        .unwrap();
    let oracle =
        spliced_forward(&bundle, &tokens, &mask, &[(layer, position, vector, OracleEdit::Add)]);
    assert!(max_abs_diff(&record.logits, &oracle.logits) < 1e-6);
}

#[test]
fn gqa_forward_matches_oracle() {
    let bundle = toy_bundle_with(11, ModelConfig::toy(3, 48, 4, 2, 96, 64));
    let (tokens, mask) = encode(&bundle, "grouped query attention");
    let record = bundle.forward(&ForwardRequest::new(&tokens, &mask)).unwrap();
    let oracle = spliced_forward(&bundle, &tokens, &mask, &[]);
    assert!(max_abs_diff(&record.logits, &oracle.logits) < 1e-6);
}

#[test]
fn learned_positions_and_layernorm_gelu_match_oracle() {
    let mut config = ModelConfig::toy(2, 32, 4, 4, 64, 64);
    config.position_encoding = PositionEncoding::Learned;
    config.norm_kind = NormKind::Layernorm;
    config.mlp_kind = MlpKind::Gelu;
    let bundle = toy_bundle_with(17, config);
    let (tokens, mask) = encode(&bundle, "gpt style block");
    let record = bundle.forward(&ForwardRequest::new(&tokens, &mask)).unwrap();
    let oracle = spliced_forward(&bundle, &tokens, &mask, &[]);
    assert!(max_abs_diff(&record.logits, &oracle.logits) < 1e-6);
}

#[test]
fn left_padded_forward_matches_oracle() {
    let bundle = toy_bundle(23);
    let tokens_raw = bundle.tokenizer().encode("padded run").unwrap();
    let pad = bundle.tokenizer().pad_or_eos().unwrap();
    let mut tokens = vec![pad; 3];
    tokens.extend(&tokens_raw);
    let mut mask = vec![false; 3];
    mask.extend(std::iter::repeat(true).take(tokens_raw.len()));
    let record = bundle.forward(&ForwardRequest::new(&tokens, &mask)).unwrap();
    let oracle = spliced_forward(&bundle, &tokens, &mask, &[]);
    assert!(max_abs_diff(&record.logits, &oracle.logits) < 1e-6);
}

#[test]
fn capture_does_not_perturb_logits() {
    let bundle = toy_bundle(7);
    let (tokens, mask) = encode(&bundle, "hooks must be transparent");
    let plain = bundle.forward(&ForwardRequest::new(&tokens, &mask)).unwrap();
    let captured = bundle
        .forward(&ForwardRequest::new(&tokens, &mask).with_capture(
            HookPoint::all_layers_all_positions(bundle.config().n_layers),
        ))
        .unwrap();
    assert_eq!(plain.logits, captured.logits);
    assert_eq!(
        captured.cache.len(),
        bundle.config().n_layers * tokens.len()
    );
    assert!(plain.cache.is_empty());
}

#[test]
fn self_patch_is_identity_bitwise() {
    let bundle = toy_bundle(7);
    let (tokens, mask) = encode(&bundle, "self patch identity");
    let baseline = bundle
        .forward(&ForwardRequest::new(&tokens, &mask).with_capture(
            HookPoint::all_layers_all_positions(bundle.config().n_layers),
        ))
        .unwrap();
    for layer in 0..bundle.config().n_layers {
        for position in [0usize, tokens.len() / 2, tokens.len() - 1] {
            let vector = baseline.cache.get(layer, position).unwrap().to_vec();
            let patched = bundle
                .forward(&ForwardRequest::new(&tokens, &mask).with_edits(vec![
                    ResidualEdit::replace(layer, position, vector),
                ]))
                .unwrap();
            assert_eq!(patched.logits, baseline.logits, "layer {layer} pos {position}");
        }
    }
}

#[test]
fn causal_prefix_activations_ignore_suffix() {
    let bundle = toy_bundle(31);
    let full = bundle.tokenizer().encode("shared prefix then more").unwrap();
    let prefix_len = 8usize;
    let prefix = &full[..prefix_len];
    let capture = HookPoint::all_layers_all_positions(bundle.config().n_layers);

    let short = bundle
        .forward(
            &ForwardRequest::new(prefix, &vec![true; prefix_len]).with_capture(capture.clone()),
        )
        .unwrap();
    let long = bundle
        .forward(&ForwardRequest::new(&full, &vec![true; full.len()]).with_capture(capture))
        .unwrap();
    for layer in 0..bundle.config().n_layers {
        for pos in 0..prefix_len {
            assert_eq!(
                short.cache.get(layer, pos).unwrap(),
                long.cache.get(layer, pos).unwrap(),
                "prefix activation changed at layer {layer} pos {pos}"
            );
        }
    }
}

#[test]
fn edit_locality() {
    let bundle = toy_bundle(13);
    let (tokens, mask) = encode(&bundle, "locality of interventions");
    let capture = HookPoint::all_layers_all_positions(bundle.config().n_layers);
    let clean = bundle
        .forward(&ForwardRequest::new(&tokens, &mask).with_capture(capture.clone()))
        .unwrap();

    let edit_layer = 2usize;
    let edit_pos = 5usize;
    let vector: Vec<f32> = vec![0.321; bundle.config().d_model];
    let edited = bundle
        .forward(&ForwardRequest::new(&tokens, &mask).with_capture(capture).with_edits(vec![
            ResidualEdit::add(edit_layer, edit_pos, vector),
        ]))
        .unwrap();

    for layer in 0..bundle.config().n_layers {
        for pos in 0..tokens.len() {
            let before = clean.cache.get(layer, pos).unwrap();
            let after = edited.cache.get(layer, pos).unwrap();
            let same = before == after;
            if layer < edit_layer {
                assert!(same, "edit leaked upward to layer {layer} pos {pos}");
            } else if layer == edit_layer {
                // Captures run after same-hook edits: only the edited cell
                // may differ.
                assert_eq!(same, pos != edit_pos, "layer {layer} pos {pos}");
            } else if pos < edit_pos {
                assert!(same, "edit leaked to earlier position {pos} at layer {layer}");
            }
        }
    }
}

#[test]
fn degenerate_gqa_matches_mha_path_bitwise() {
    let bundle = toy_bundle(19);
    let (tokens, mask) = encode(&bundle, "two attention paths");
    let mha = bundle
        .forward(
            &ForwardRequest::new(&tokens, &mask).with_attention_path(AttentionPath::MultiHead),
        )
        .unwrap();
    let grouped = bundle
        .forward(&ForwardRequest::new(&tokens, &mask).with_attention_path(AttentionPath::Grouped))
        .unwrap();
    assert_eq!(mha.logits, grouped.logits);
}

#[test]
fn gqa_shapes_walk_every_matmul() {
    // Shape audit: every matmul in a GQA + rotary block agrees
    // dimensionally with the config.
    let config = ModelConfig::toy(2, 64, 4, 2, 128, 64);
    let bundle = toy_bundle_with(29, config.clone());
    let weights = bundle.weights();
    let d = config.d_model;
    let kv = config.n_kv_heads * (d / config.n_heads);
    assert_eq!(weights.embedding.shape(), (config.vocab_size, d));
    for layer in &weights.layers {
        // resid [seq, d] x wq^T [d, d] -> q [seq, d]
        assert_eq!(layer.wq.shape(), (d, d));
        // resid [seq, d] x wk^T [d, kv] -> k [seq, kv]
        assert_eq!(layer.wk.shape(), (kv, d));
        assert_eq!(layer.wv.shape(), (kv, d));
        // attn out [seq, d] x wo^T [d, d] -> [seq, d]
        assert_eq!(layer.wo.shape(), (d, d));
        match &layer.mlp {
            vallens::model::MlpWeights::GatedSilu { gate, up, down } => {
                assert_eq!(gate.shape(), (config.d_mlp, d));
                assert_eq!(up.shape(), (config.d_mlp, d));
                assert_eq!(down.shape(), (d, config.d_mlp));
            }
            _ => panic!("toy config uses gated silu"),
        }
    }
    assert_eq!(weights.unembedding.shape(), (config.vocab_size, d));
    // And the forward actually runs.
    let (tokens, mask) = encode(&bundle, "shape audit");
    bundle.forward(&ForwardRequest::new(&tokens, &mask)).unwrap();
}

#[test]
fn capture_positions_respect_selectors() {
    let bundle = toy_bundle(7);
    let (tokens, mask) = encode(&bundle, "selector check");
    let record = bundle
        .forward(&ForwardRequest::new(&tokens, &mask).with_capture(vec![
            HookPoint::resid_pre(1, PositionSelector::Set(vec![0, 3])),
            HookPoint::resid_pre(2, PositionSelector::Single(tokens.len() - 1)),
        ]))
        .unwrap();
    assert_eq!(record.cache.len(), 3);
    assert!(record.cache.get(1, 0).is_some());
    assert!(record.cache.get(1, 3).is_some());
    assert!(record.cache.get(2, tokens.len() - 1).is_some());
    assert!(record.cache.get(0, 0).is_none());
}

#[test]
fn forward_validation_errors() {
    let bundle = toy_bundle(7);
    let (tokens, mask) = encode(&bundle, "ok");
    let d = bundle.config().d_model;

    let too_big = vec![bundle.config().vocab_size as u32 + 5];
    assert!(bundle.forward(&ForwardRequest::new(&too_big, &vec![true])).is_err());

    let bad_mask = ForwardRequest::new(&tokens, &mask[..1]);
    assert!(bundle.forward(&bad_mask).is_err());

    let bad_edit = ForwardRequest::new(&tokens, &mask)
        .with_edits(vec![ResidualEdit::replace(0, 0, vec![f32::NAN; d])]);
    assert!(bundle.forward(&bad_edit).is_err());

    let bad_dim =
        ForwardRequest::new(&tokens, &mask).with_edits(vec![ResidualEdit::add(0, 0, vec![1.0])]);
    assert!(bundle.forward(&bad_dim).is_err());

    let bad_layer = ForwardRequest::new(&tokens, &mask)
        .with_edits(vec![ResidualEdit::add(99, 0, vec![0.0; d])]);
    assert!(bundle.forward(&bad_layer).is_err());
}

#[test]
fn multiple_edits_apply_in_list_order() {
    let bundle = toy_bundle(7);
    let (tokens, mask) = encode(&bundle, "ordered edits");
    let d = bundle.config().d_model;
    let last = tokens.len() - 1;
    let a = vec![1.0f32; d];
    let b = vec![-0.5f32; d];

    // replace-then-add equals a single replace with (a + b).
    let combined: Vec<f32> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
    let sequential = bundle
        .forward(&ForwardRequest::new(&tokens, &mask).with_edits(vec![
            ResidualEdit::replace(1, last, a.clone()),
            ResidualEdit::add(1, last, b.clone()),
        ]))
        .unwrap();
    let direct = bundle
        .forward(&ForwardRequest::new(&tokens, &mask).with_edits(vec![ResidualEdit::replace(
            1, last, combined,
        )]))
        .unwrap();
    assert_eq!(sequential.logits, direct.logits);

    // add-then-replace: the replace wins.
    let replaced_last = bundle
        .forward(&ForwardRequest::new(&tokens, &mask).with_edits(vec![
            ResidualEdit::add(1, last, b),
            ResidualEdit::replace(1, last, a.clone()),
        ]))
        .unwrap();
    let replace_only = bundle
        .forward(
            &ForwardRequest::new(&tokens, &mask)
                .with_edits(vec![ResidualEdit::replace(1, last, a)]),
        )
        .unwrap();
    assert_eq!(replaced_last.logits, replace_only.logits);
}

#[test]
fn half_precision_forward_stays_close_to_full() {
    let bundle = toy_bundle(7);
    let half = bundle.clone().into_precision(vallens::model::Precision::Half);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let text = random_text(&mut rng, 12);
    let (tokens, mask) = encode(&bundle, &text);
    let full_logits = bundle.forward(&ForwardRequest::new(&tokens, &mask)).unwrap().logits;
    let half_logits = half.forward(&ForwardRequest::new(&tokens, &mask)).unwrap().logits;
    // f16 weight rounding moves logits slightly; they must stay close.
    assert!(max_abs_diff(&full_logits, &half_logits) < 0.2);
    // And the half path is itself deterministic.
    let again = half.forward(&ForwardRequest::new(&tokens, &mask)).unwrap().logits;
    assert_eq!(half_logits, again);
}
