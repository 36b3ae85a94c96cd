//! Single-token anchor resolution against a bundle's tokenizer.

use super::TextError;
use crate::metric::{AnchorSet, ResolvedAnchors};
use crate::model::ModelBundle;

/// Surface variants tried per anchor word, in order: leading space, bare,
/// capitalized with leading space. The first variant that encodes to a single
/// token wins; words with no single-token variant are dropped.
fn single_token_id(bundle: &ModelBundle, word: &str) -> Option<u32> {
    let capitalized = {
        let mut chars = word.chars();
        match chars.next() {
            Some(first) => first.to_uppercase().collect::<String>() + chars.as_str(),
            None => String::new(),
        }
    };
    let variants = [format!(" {word}"), word.to_string(), format!(" {capitalized}")];
    for variant in &variants {
        if let Ok(ids) = bundle.tokenizer().encode(variant) {
            if ids.len() == 1 {
                return Some(ids[0]);
            }
        }
    }
    None
}

fn resolve_side(bundle: &ModelBundle, words: &[String]) -> Vec<u32> {
    let mut ids = Vec::new();
    for word in words {
        if let Some(id) = single_token_id(bundle, word) {
            if !ids.contains(&id) {
                ids.push(id);
            }
        }
    }
    ids
}

/// Resolve an anchor set to model-specific single-token ids, recording how
/// many anchors survived per side. Errors if either side ends up empty.
pub fn resolve_anchors(bundle: &ModelBundle, set: &AnchorSet) -> Result<ResolvedAnchors, TextError> {
    let positive_ids = resolve_side(bundle, &set.positive);
    let negative_ids = resolve_side(bundle, &set.negative);
    if positive_ids.is_empty() {
        return Err(TextError::NoValidAnchors { side: "positive" });
    }
    if negative_ids.is_empty() {
        return Err(TextError::NoValidAnchors { side: "negative" });
    }
    let valid_counts = (positive_ids.len(), negative_ids.len());
    Ok(ResolvedAnchors {
        positive_ids,
        negative_ids,
        valid_counts,
        source_set: set.name.clone(),
    })
}
