//! Residual-stream activation patching: per-layer sweeps at the final token
//! position and layer-by-position heatmaps.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metric::{self, MetricError, ResolvedAnchors};
use crate::model::{ForwardRequest, HookPoint, ModelBundle, ModelError, ResidualEdit};
use crate::text::TokenizedPair;
use crate::{Condition, Domain};

#[derive(Debug, Error)]
pub enum PatchError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("clean cache is missing layer {layer} (cache covers {cached} layers, bundle has {expected})")]
    LayerCountMismatch { layer: usize, cached: usize, expected: usize },
    #[error("summarize_sweeps needs a non-empty, single-condition input")]
    MixedOrEmptySweeps,
}

/// Per-pair result of a layer sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatchSweepResult {
    pub pair_id: u32,
    pub condition: Condition,
    pub domain: Domain,
    pub clean_score: f64,
    pub corrupted_score: f64,
    /// clean_score - corrupted_score.
    pub gap: f64,
    /// patched_score(l) - corrupted_score, per layer.
    pub per_layer_effect: Vec<f64>,
    /// Layer whose patch moves the output furthest toward the clean run
    /// (ties break to the lowest layer).
    pub top_layer: usize,
    /// Signed per-layer effect at `top_layer`.
    pub max_patch_effect: f64,
    pub valid_anchor_counts: (usize, usize),
}

/// Layer-by-position patch effects for one pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeatmapResult {
    pub pair_id: u32,
    pub condition: Condition,
    /// `effects[layer][position]`.
    pub effects: Vec<Vec<f64>>,
    pub token_labels: Vec<String>,
    /// True where a position is padding in either sequence; those cells are
    /// recorded as zero and skipped.
    pub pad_mask: Vec<bool>,
}

/// Identification of the pair a sweep belongs to.
#[derive(Debug, Clone, Copy)]
pub struct PairMeta {
    pub pair_id: u32,
    pub condition: Condition,
    pub domain: Domain,
}

/// The layer whose patch most restores clean behavior: argmax over layers of
/// `effect * sign(gap)`, ties to the lowest layer. Isolated here so the
/// selection convention can be swapped in one place.
pub fn select_top_layer(per_layer_effect: &[f64], gap: f64) -> usize {
    let sign = if gap < 0.0 { -1.0 } else { 1.0 };
    let mut best = 0usize;
    let mut best_score = f64::NEG_INFINITY;
    for (l, &e) in per_layer_effect.iter().enumerate() {
        let restoration = e * sign;
        if restoration > best_score {
            best_score = restoration;
            best = l;
        }
    }
    best
}

struct CleanRun {
    score: f64,
    cache: crate::model::ActivationCache,
}

fn clean_forward(
    bundle: &ModelBundle,
    pair: &TokenizedPair,
    anchors: &ResolvedAnchors,
    capture: Vec<HookPoint>,
) -> Result<CleanRun, PatchError> {
    let record = bundle.forward(
        &ForwardRequest::new(&pair.clean_tokens, &pair.clean_mask).with_capture(capture),
    )?;
    let score = metric::score(&record.logits, anchors)?.score;
    Ok(CleanRun { score, cache: record.cache })
}

fn cached_vector<'c>(
    cache: &'c crate::model::ActivationCache,
    layer: usize,
    position: usize,
    n_layers: usize,
) -> Result<&'c [f32], PatchError> {
    cache.get(layer, position).ok_or(PatchError::LayerCountMismatch {
        layer,
        cached: cache.len(),
        expected: n_layers,
    })
}

/// Patch the corrupted run's final-position residual with the clean run's
/// cached value, one layer at a time, and record the score movement.
pub fn patch_sweep(
    bundle: &ModelBundle,
    pair: &TokenizedPair,
    anchors: &ResolvedAnchors,
    meta: PairMeta,
) -> Result<PatchSweepResult, PatchError> {
    let n_layers = bundle.config().n_layers;
    let last = pair.len() - 1;
    let clean = clean_forward(
        bundle,
        pair,
        anchors,
        HookPoint::all_layers_at(n_layers, last),
    )?;

    let corrupted_record =
        bundle.forward(&ForwardRequest::new(&pair.corrupted_tokens, &pair.corrupted_mask))?;
    let corrupted_score = metric::score(&corrupted_record.logits, anchors)?.score;

    let mut per_layer_effect = Vec::with_capacity(n_layers);
    for layer in 0..n_layers {
        let vector = cached_vector(&clean.cache, layer, last, n_layers)?.to_vec();
        let record = bundle.forward(
            &ForwardRequest::new(&pair.corrupted_tokens, &pair.corrupted_mask)
                .with_edits(vec![ResidualEdit::replace(layer, last, vector)]),
        )?;
        let patched_score = metric::score(&record.logits, anchors)?.score;
        per_layer_effect.push(patched_score - corrupted_score);
    }

    let gap = clean.score - corrupted_score;
    let top_layer = select_top_layer(&per_layer_effect, gap);
    let max_patch_effect = per_layer_effect[top_layer];
    Ok(PatchSweepResult {
        pair_id: meta.pair_id,
        condition: meta.condition,
        domain: meta.domain,
        clean_score: clean.score,
        corrupted_score,
        gap,
        per_layer_effect,
        top_layer,
        max_patch_effect,
        valid_anchor_counts: anchors.valid_counts,
    })
}

/// Single-cell patches over every (layer, position). Pad positions (in
/// either sequence) are recorded as zero and flagged in `pad_mask`.
pub fn patch_heatmap(
    bundle: &ModelBundle,
    pair: &TokenizedPair,
    anchors: &ResolvedAnchors,
    meta: PairMeta,
) -> Result<HeatmapResult, PatchError> {
    let n_layers = bundle.config().n_layers;
    let seq = pair.len();
    let clean = clean_forward(
        bundle,
        pair,
        anchors,
        HookPoint::all_layers_all_positions(n_layers),
    )?;

    let corrupted_record =
        bundle.forward(&ForwardRequest::new(&pair.corrupted_tokens, &pair.corrupted_mask))?;
    let corrupted_score = metric::score(&corrupted_record.logits, anchors)?.score;

    let pad_mask: Vec<bool> = (0..seq)
        .map(|p| !(pair.clean_mask[p] && pair.corrupted_mask[p]))
        .collect();

    let mut effects = vec![vec![0.0f64; seq]; n_layers];
    for layer in 0..n_layers {
        for position in 0..seq {
            if pad_mask[position] {
                continue;
            }
            let vector = cached_vector(&clean.cache, layer, position, n_layers)?.to_vec();
            let record = bundle.forward(
                &ForwardRequest::new(&pair.corrupted_tokens, &pair.corrupted_mask)
                    .with_edits(vec![ResidualEdit::replace(layer, position, vector)]),
            )?;
            let patched_score = metric::score(&record.logits, anchors)?.score;
            effects[layer][position] = patched_score - corrupted_score;
        }
    }

    let token_labels = pair
        .corrupted_tokens
        .iter()
        .enumerate()
        .map(|(p, &t)| {
            if pair.corrupted_mask[p] {
                bundle.tokenizer().token_label(t)
            } else {
                "<pad>".to_string()
            }
        })
        .collect();

    Ok(HeatmapResult {
        pair_id: meta.pair_id,
        condition: meta.condition,
        effects,
        token_labels,
        pad_mask,
    })
}

/// Per-prompt point retained for correlation statistics.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SweepPoint {
    pub pair_id: u32,
    pub top_layer: usize,
    pub max_patch_effect: f64,
    pub gap: f64,
}

/// Condition-level summary of a set of sweeps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: Condition,
    pub n: usize,
    /// Lower median of the top-layer distribution.
    pub median_top_layer: usize,
    /// Per-prompt series in pair-id order.
    pub points: Vec<SweepPoint>,
}

impl ConditionSummary {
    pub fn top_layers(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.top_layer as f64).collect()
    }
}

/// Lower median: for even counts the lower of the two central values.
pub fn lower_median(values: &[usize]) -> Option<usize> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    Some(sorted[(sorted.len() - 1) / 2])
}

pub fn summarize_sweeps(results: &[PatchSweepResult]) -> Result<ConditionSummary, PatchError> {
    let first = results.first().ok_or(PatchError::MixedOrEmptySweeps)?;
    if results.iter().any(|r| r.condition != first.condition) {
        return Err(PatchError::MixedOrEmptySweeps);
    }
    let mut points: Vec<SweepPoint> = results
        .iter()
        .map(|r| SweepPoint {
            pair_id: r.pair_id,
            top_layer: r.top_layer,
            max_patch_effect: r.max_patch_effect,
            gap: r.gap,
        })
        .collect();
    points.sort_by_key(|p| p.pair_id);
    let top_layers: Vec<usize> = points.iter().map(|p| p.top_layer).collect();
    Ok(ConditionSummary {
        condition: first.condition,
        n: points.len(),
        median_top_layer: lower_median(&top_layers).expect("non-empty"),
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_layer_prefers_restoration_direction() {
        // Positive gap: plain argmax.
        assert_eq!(select_top_layer(&[0.1, 0.9, 0.3], 2.0), 1);
        // Negative gap: the most negative effect restores the clean run.
        assert_eq!(select_top_layer(&[0.1, -0.9, 0.3], -2.0), 1);
        // Ties break to the lowest layer.
        assert_eq!(select_top_layer(&[0.5, 0.5], 1.0), 0);
    }

    #[test]
    fn lower_median_convention() {
        assert_eq!(lower_median(&[2, 2, 9]), Some(2));
        assert_eq!(lower_median(&[1, 2, 3, 4]), Some(2));
        assert_eq!(lower_median(&[]), None);
    }

    fn sweep(pair_id: u32, condition: Condition, top_layer: usize) -> PatchSweepResult {
        PatchSweepResult {
            pair_id,
            condition,
            domain: Domain::Academia,
            clean_score: 1.0,
            corrupted_score: 0.0,
            gap: 1.0,
            per_layer_effect: vec![0.0; top_layer + 1],
            top_layer,
            max_patch_effect: 0.5,
            valid_anchor_counts: (1, 1),
        }
    }

    #[test]
    fn summarize_requires_single_condition() {
        let sweeps = vec![
            sweep(1, Condition::GoodNews, 2),
            sweep(0, Condition::GoodNews, 9),
            sweep(2, Condition::GoodNews, 2),
        ];
        let summary = summarize_sweeps(&sweeps).unwrap();
        assert_eq!(summary.median_top_layer, 2);
        assert_eq!(summary.points[0].pair_id, 0);

        let mixed = vec![sweep(0, Condition::GoodNews, 1), sweep(1, Condition::NegativeControl, 2)];
        assert!(summarize_sweeps(&mixed).is_err());
        assert!(summarize_sweeps(&[]).is_err());
    }
}
