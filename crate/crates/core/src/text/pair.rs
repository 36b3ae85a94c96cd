//! Equal-length left-padding of clean/corrupted token pairs.

use serde::{Deserialize, Serialize};

use super::TextError;
use crate::model::ModelBundle;

/// A clean/corrupted pair of token sequences, left-padded to equal length so
/// the final position of each sequence is a real (non-pad) token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizedPair {
    pub clean_tokens: Vec<u32>,
    pub corrupted_tokens: Vec<u32>,
    pub clean_mask: Vec<bool>,
    pub corrupted_mask: Vec<bool>,
    /// Longest common prefix of the padded id sequences.
    pub shared_prefix_len: usize,
}

impl TokenizedPair {
    pub fn len(&self) -> usize {
        self.clean_tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean_tokens.is_empty()
    }
}

fn left_pad(tokens: &[u32], target_len: usize, pad_id: u32) -> (Vec<u32>, Vec<bool>) {
    let n_pad = target_len - tokens.len();
    let mut padded = vec![pad_id; n_pad];
    padded.extend_from_slice(tokens);
    let mut mask = vec![false; n_pad];
    mask.extend(std::iter::repeat(true).take(tokens.len()));
    (padded, mask)
}

/// Left-pad the shorter sequence with `pad_id` so both have the length of the
/// longer one. Masks are false exactly at the added pad positions.
pub fn pad_pair(clean: &[u32], corrupted: &[u32], pad_id: u32) -> Result<TokenizedPair, TextError> {
    if clean.is_empty() || corrupted.is_empty() {
        return Err(TextError::EmptySequence);
    }
    let target = clean.len().max(corrupted.len());
    let (clean_tokens, clean_mask) = left_pad(clean, target, pad_id);
    let (corrupted_tokens, corrupted_mask) = left_pad(corrupted, target, pad_id);
    let shared_prefix_len = clean_tokens
        .iter()
        .zip(&corrupted_tokens)
        .take_while(|(a, b)| a == b)
        .count();
    Ok(TokenizedPair {
        clean_tokens,
        corrupted_tokens,
        clean_mask,
        corrupted_mask,
        shared_prefix_len,
    })
}

/// Render both texts through the chat template, tokenize with the bundle's
/// tokenizer, and pad to equal length using the declared pad token (EOS as
/// fallback).
pub fn tokenize_pair(
    bundle: &ModelBundle,
    template: &super::ChatTemplate,
    clean_text: &str,
    corrupted_text: &str,
) -> Result<TokenizedPair, TextError> {
    let clean = crate::text::render_and_tokenize(bundle, template, clean_text)?;
    let corrupted = crate::text::render_and_tokenize(bundle, template, corrupted_text)?;
    let pad_id = bundle.tokenizer().pad_or_eos()?;
    pad_pair(&clean, &corrupted, pad_id)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pads_shorter_sequence_on_the_left() {
        let pair = pad_pair(&[5, 6, 7], &[5, 6, 7, 8], 0).unwrap();
        assert_eq!(pair.clean_tokens, vec![0, 5, 6, 7]);
        assert_eq!(pair.corrupted_tokens, vec![5, 6, 7, 8]);
        assert_eq!(pair.clean_mask, vec![false, true, true, true]);
        assert_eq!(pair.corrupted_mask, vec![true, true, true, true]);
    }

    #[test]
    fn equal_length_inputs_pass_through() {
        let pair = pad_pair(&[1, 2], &[3, 4], 9).unwrap();
        assert_eq!(pair.clean_tokens, vec![1, 2]);
        assert_eq!(pair.corrupted_tokens, vec![3, 4]);
        assert!(pair.clean_mask.iter().all(|&m| m));
        assert!(pair.corrupted_mask.iter().all(|&m| m));
        assert_eq!(pair.shared_prefix_len, 0);
    }

    #[test]
    fn shared_prefix_counts_padded_ids() {
        let pair = pad_pair(&[1], &[2, 3], 9).unwrap();
        assert_eq!(pair.clean_tokens, vec![9, 1]);
        assert_eq!(pair.shared_prefix_len, 0);

        let pair = pad_pair(&[7, 1], &[7, 2], 0).unwrap();
        assert_eq!(pair.shared_prefix_len, 1);
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(matches!(pad_pair(&[], &[1], 0), Err(TextError::EmptySequence)));
    }
}
