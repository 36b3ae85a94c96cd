//! Mean-difference steering directions and scaled additive interventions.
//!
//! A direction is the unit-normalized mean of (clean - corrupted) final-token
//! resid_pre activations at one layer over a seeded sample of prompt pairs.
//! Steering adds `alpha * direction` at that layer's final token position and
//! measures the valence-score movement on neutral prompts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::PromptPair;
use crate::metric::{self, MetricError, ResolvedAnchors};
use crate::model::{
    ForwardRequest, HookPoint, ModelBundle, ModelError, PositionSelector, ResidualEdit,
};
use crate::stats::{self, SpearmanResult, StatsError};
use crate::text::{self, ChatTemplate, TextError};
use crate::Condition;

/// The alpha grid used by the main steering experiments.
pub const DEFAULT_ALPHAS: [f64; 7] = [-20.0, -10.0, -5.0, 0.0, 5.0, 10.0, 20.0];

#[derive(Debug, Error)]
pub enum SteeringError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("requested {requested} pairs but only {available} are available")]
    NotEnoughPairs { requested: usize, available: usize },
    #[error("layer {layer} is out of range for {n_layers} layers")]
    LayerOutOfRange { layer: usize, n_layers: usize },
    #[error("activation differences have zero norm; the corpus is degenerate")]
    ZeroNormDirection,
    #[error("direction has dimension {got}, model expects {want}")]
    DimensionMismatch { got: usize, want: usize },
    #[error("alpha must be finite")]
    NonFiniteAlpha,
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
}

/// A unit-norm residual-stream steering direction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SteeringDirection {
    pub layer: usize,
    pub condition: Condition,
    pub direction: Vec<f32>,
    /// Norm of the mean difference before unit-normalization.
    pub raw_norm: f64,
    pub n_pairs: usize,
    pub sample_seed: u64,
}

impl SteeringDirection {
    pub fn save(&self, path: &std::path::Path) -> std::io::Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self).expect("direction serializes"))
    }

    pub fn load(path: &std::path::Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

/// One steering measurement.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SteerOutcome {
    pub prompt_index: usize,
    pub alpha: f64,
    pub base_score: f64,
    pub steered_score: f64,
    pub delta: f64,
}

/// Mean the difference vectors (f64 accumulation in fixed order) and
/// unit-normalize.
pub(crate) fn unit_direction(diffs: &[Vec<f64>]) -> Result<(Vec<f32>, f64), SteeringError> {
    let dim = diffs.first().ok_or(SteeringError::EmptyInput("no difference vectors"))?.len();
    let mut mean = vec![0.0f64; dim];
    for diff in diffs {
        for (m, d) in mean.iter_mut().zip(diff) {
            *m += d;
        }
    }
    for m in mean.iter_mut() {
        *m /= diffs.len() as f64;
    }
    let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(SteeringError::ZeroNormDirection);
    }
    Ok((mean.iter().map(|v| (v / norm) as f32).collect(), norm))
}

fn final_resid_pre(
    bundle: &ModelBundle,
    tokens: &[u32],
    mask: &[bool],
    layer: usize,
) -> Result<Vec<f32>, SteeringError> {
    let last = tokens.len() - 1;
    let record = bundle.forward(&ForwardRequest::new(tokens, mask).with_capture(vec![
        HookPoint::resid_pre(layer, PositionSelector::Single(last)),
    ]))?;
    Ok(record.cache.get(layer, last).expect("requested capture present").to_vec())
}

/// Extract a steering direction from `n_pairs` seed-sampled prompt pairs of
/// one condition at `layer`. Sampling is without replacement and
/// deterministic in `seed`; the reduction runs in sampled-index order.
pub fn extract_direction(
    bundle: &ModelBundle,
    template: &ChatTemplate,
    pairs: &[&PromptPair],
    layer: usize,
    n_pairs: usize,
    seed: u64,
) -> Result<SteeringDirection, SteeringError> {
    if pairs.is_empty() || n_pairs == 0 {
        return Err(SteeringError::EmptyInput("no prompt pairs"));
    }
    if n_pairs > pairs.len() {
        return Err(SteeringError::NotEnoughPairs { requested: n_pairs, available: pairs.len() });
    }
    let n_layers = bundle.config().n_layers;
    if layer >= n_layers {
        return Err(SteeringError::LayerOutOfRange { layer, n_layers });
    }
    let condition = pairs[0].condition;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampled = rand::seq::index::sample(&mut rng, pairs.len(), n_pairs);

    let mut diffs = Vec::with_capacity(n_pairs);
    for idx in sampled.iter() {
        let pair = pairs[idx];
        let tokenized = text::tokenize_pair(bundle, template, &pair.clean, &pair.corrupted)?;
        let clean =
            final_resid_pre(bundle, &tokenized.clean_tokens, &tokenized.clean_mask, layer)?;
        let corrupted = final_resid_pre(
            bundle,
            &tokenized.corrupted_tokens,
            &tokenized.corrupted_mask,
            layer,
        )?;
        let diff: Vec<f64> =
            clean.iter().zip(&corrupted).map(|(c, k)| *c as f64 - *k as f64).collect();
        diffs.push(diff);
    }

    let (direction, raw_norm) = unit_direction(&diffs)?;
    Ok(SteeringDirection { layer, condition, direction, raw_norm, n_pairs, sample_seed: seed })
}

/// Score a neutral prompt with and without the additive intervention
/// `alpha * direction` at the final token position of the direction's layer.
/// `alpha == 0` short-circuits the edit, so delta is exactly zero.
pub fn steer_and_score(
    bundle: &ModelBundle,
    template: &ChatTemplate,
    neutral_prompt: &str,
    prompt_index: usize,
    dir: &SteeringDirection,
    alpha: f64,
    anchors: &ResolvedAnchors,
) -> Result<SteerOutcome, SteeringError> {
    if !alpha.is_finite() {
        return Err(SteeringError::NonFiniteAlpha);
    }
    if dir.direction.len() != bundle.config().d_model {
        return Err(SteeringError::DimensionMismatch {
            got: dir.direction.len(),
            want: bundle.config().d_model,
        });
    }
    let tokens = text::render_and_tokenize(bundle, template, neutral_prompt)?;
    if tokens.is_empty() {
        return Err(SteeringError::EmptyInput("neutral prompt tokenized to nothing"));
    }
    let mask = vec![true; tokens.len()];
    let base_record = bundle.forward(&ForwardRequest::new(&tokens, &mask))?;
    let base_score = metric::score(&base_record.logits, anchors)?.score;

    let steered_score = if alpha == 0.0 {
        base_score
    } else {
        let vector: Vec<f32> = dir.direction.iter().map(|v| (alpha * *v as f64) as f32).collect();
        let record = bundle.forward(&ForwardRequest::new(&tokens, &mask).with_edits(vec![
            ResidualEdit::add(dir.layer, tokens.len() - 1, vector),
        ]))?;
        metric::score(&record.logits, anchors)?.score
    };

    Ok(SteerOutcome {
        prompt_index,
        alpha,
        base_score,
        steered_score,
        delta: steered_score - base_score,
    })
}

/// Per-alpha aggregate of an alpha sweep.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AlphaStats {
    pub alpha: f64,
    pub mean_delta: f64,
    /// Fraction of prompts with delta > 0 at this alpha.
    pub pct_shifted_positive: f64,
    /// Fraction of prompts with delta < 0 at this alpha.
    pub pct_shifted_negative: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlphaSweepSummary {
    pub condition: Condition,
    pub layer: usize,
    pub n_prompts: usize,
    pub per_alpha: Vec<AlphaStats>,
    /// Spearman rank correlation over all (alpha, delta) points.
    pub spearman_alpha_delta: SpearmanResult,
}

/// Run the full (prompt, alpha) grid for one direction.
pub fn alpha_sweep(
    bundle: &ModelBundle,
    template: &ChatTemplate,
    neutral_prompts: &[String],
    dir: &SteeringDirection,
    alphas: &[f64],
    anchors: &ResolvedAnchors,
) -> Result<(Vec<SteerOutcome>, AlphaSweepSummary), SteeringError> {
    if neutral_prompts.is_empty() {
        return Err(SteeringError::EmptyInput("no neutral prompts"));
    }
    if alphas.is_empty() {
        return Err(SteeringError::EmptyInput("no alphas"));
    }
    let mut outcomes = Vec::with_capacity(neutral_prompts.len() * alphas.len());
    for (prompt_index, prompt) in neutral_prompts.iter().enumerate() {
        for &alpha in alphas {
            outcomes.push(steer_and_score(
                bundle,
                template,
                prompt,
                prompt_index,
                dir,
                alpha,
                anchors,
            )?);
        }
    }

    let mut per_alpha = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let deltas: Vec<f64> =
            outcomes.iter().filter(|o| o.alpha == alpha).map(|o| o.delta).collect();
        let n = deltas.len() as f64;
        per_alpha.push(AlphaStats {
            alpha,
            mean_delta: deltas.iter().sum::<f64>() / n,
            pct_shifted_positive: deltas.iter().filter(|&&d| d > 0.0).count() as f64 / n,
            pct_shifted_negative: deltas.iter().filter(|&&d| d < 0.0).count() as f64 / n,
        });
    }

    let xs: Vec<f64> = outcomes.iter().map(|o| o.alpha).collect();
    let ys: Vec<f64> = outcomes.iter().map(|o| o.delta).collect();
    // Grids too small to rank-correlate are flagged, not fatal.
    let spearman_alpha_delta = match stats::spearman(&xs, &ys) {
        Ok(r) => r,
        Err(StatsError::TooFewObservations(n)) => {
            SpearmanResult { rho: f64::NAN, p_value: 1.0, n, degenerate: true }
        }
        Err(e) => return Err(e.into()),
    };

    let summary = AlphaSweepSummary {
        condition: dir.condition,
        layer: dir.layer,
        n_prompts: neutral_prompts.len(),
        per_alpha,
        spearman_alpha_delta,
    };
    Ok((outcomes, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_direction_normalizes() {
        let (dir, norm) = unit_direction(&[vec![3.0, 0.0], vec![0.0, 4.0]]).unwrap();
        // mean = (1.5, 2.0), norm = 2.5
        assert!((norm - 2.5).abs() < 1e-12);
        assert!((dir[0] - 0.6).abs() < 1e-6);
        assert!((dir[1] - 0.8).abs() < 1e-6);
    }

    #[test]
    fn unit_direction_is_scale_invariant() {
        let diffs = vec![vec![0.2, -0.7, 1.3], vec![-0.4, 0.9, 0.1]];
        let scaled: Vec<Vec<f64>> =
            diffs.iter().map(|d| d.iter().map(|v| v * 37.5).collect()).collect();
        let (a, _) = unit_direction(&diffs).unwrap();
        let (b, _) = unit_direction(&scaled).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_diffs_are_degenerate() {
        assert!(matches!(
            unit_direction(&[vec![0.0, 0.0]]),
            Err(SteeringError::ZeroNormDirection)
        ));
    }

    #[test]
    fn default_alpha_grid_matches_experiment_plan() {
        assert_eq!(DEFAULT_ALPHAS, [-20.0, -10.0, -5.0, 0.0, 5.0, 10.0, 20.0]);
    }
}
