//! Shared fixtures for the integration and acceptance suites.

#![allow(dead_code)]

pub mod oracle;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vallens::metric::{AnchorSetName, ResolvedAnchors};
use vallens::model::{make_toy_model, ModelBundle, ModelConfig};
use vallens::text::{pad_pair, ChatTemplate, TokenizedPair};

/// The standard 4-layer toy model used throughout the suites.
pub fn toy_bundle(seed: u64) -> ModelBundle {
    make_toy_model(seed, &ModelConfig::toy(4, 64, 4, 4, 128, 64)).unwrap()
}

pub fn toy_bundle_with(seed: u64, config: ModelConfig) -> ModelBundle {
    make_toy_model(seed, &config).unwrap()
}

/// Single-character anchors that are single tokens under the toy tokenizer.
pub fn toy_anchors(bundle: &ModelBundle) -> ResolvedAnchors {
    let pos = bundle.tokenizer().encode("a").unwrap();
    let pos2 = bundle.tokenizer().encode("b").unwrap();
    let pos3 = bundle.tokenizer().encode("c").unwrap();
    let neg = bundle.tokenizer().encode("x").unwrap();
    let neg2 = bundle.tokenizer().encode("y").unwrap();
    ResolvedAnchors {
        positive_ids: vec![pos[0], pos2[0], pos3[0]],
        negative_ids: vec![neg[0], neg2[0]],
        valid_counts: (3, 2),
        source_set: AnchorSetName::Custom,
    }
}

/// Random lowercase text the toy tokenizer always accepts.
pub fn random_text<R: Rng>(rng: &mut R, len: usize) -> String {
    const CHARS: &[u8] = b"abcdefghijklmnopqrstuvwxyz ";
    (0..len).map(|_| CHARS[rng.gen_range(0..CHARS.len())] as char).collect()
}

/// A random padded pair (different texts, possibly different lengths).
pub fn random_pair(bundle: &ModelBundle, seed: u64) -> TokenizedPair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len_a = rng.gen_range(4..14);
    let len_b = rng.gen_range(4..14);
    let clean = random_text(&mut rng, len_a);
    let corrupted = random_text(&mut rng, len_b);
    let clean_ids = bundle.tokenizer().encode(&clean).unwrap();
    let corrupted_ids = bundle.tokenizer().encode(&corrupted).unwrap();
    pad_pair(&clean_ids, &corrupted_ids, bundle.tokenizer().pad_or_eos().unwrap()).unwrap()
}

/// A pair sharing a non-trivial common prefix. Suffixes have equal length so
/// left-padding does not displace the shared region.
pub fn shared_prefix_pair(bundle: &ModelBundle, seed: u64) -> TokenizedPair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prefix_len = rng.gen_range(3..8);
    let prefix = random_text(&mut rng, prefix_len);
    let suffix_len = rng.gen_range(2..6);
    let clean = format!("{prefix}{}", random_text(&mut rng, suffix_len));
    let corrupted = format!("{prefix}{}", random_text(&mut rng, suffix_len));
    let clean_ids = bundle.tokenizer().encode(&clean).unwrap();
    let corrupted_ids = bundle.tokenizer().encode(&corrupted).unwrap();
    pad_pair(&clean_ids, &corrupted_ids, bundle.tokenizer().pad_or_eos().unwrap()).unwrap()
}

pub fn raw_template() -> ChatTemplate {
    ChatTemplate::raw()
}

pub fn max_abs_diff(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).abs()).fold(0.0, f64::max)
}
