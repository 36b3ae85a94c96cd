//! Experiment stages wired together over a corpus: scoring, flip records,
//! patch sweeps, steering, and table assembly. Stages parallelize across
//! prompt pairs with order-preserving collection, so outputs are
//! deterministic for any thread count.

use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, PromptPair};
use crate::flip::FlipRecord;
use crate::metric::{self, AnchorSet, AnchorSetName, MetricError, ResolvedAnchors};
use crate::model::{ForwardRequest, ModelBundle, ModelError};
use crate::patch::{
    self, ConditionSummary, HeatmapResult, PairMeta, PatchError, PatchSweepResult,
};
use crate::report::ScoreRecord;
use crate::steering::{
    self, AlphaSweepSummary, SteerOutcome, SteeringDirection, SteeringError,
};
use crate::text::{self, ChatTemplate, TextError, TemplateId, DEFAULT_SYSTEM_PROMPT};
use crate::Condition;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Patch(#[from] PatchError),
    #[error(transparent)]
    Steering(#[from] SteeringError),
    #[error("no pairs found for condition {0}")]
    NoPairsForCondition(Condition),
    #[error("pair {pair_id} ({condition}) not found in the corpus")]
    PairNotFound { pair_id: u32, condition: Condition },
    #[error("corpus has no neutral prompts; steering needs at least one")]
    NoNeutralPrompts,
}

/// The chat template the experiments run under: the bundle's template id
/// with the standard system prompt (raw templates carry no system prompt).
pub fn experiment_template(bundle: &ModelBundle) -> ChatTemplate {
    let id = bundle.chat_template_id();
    let system = match id {
        TemplateId::Raw => "",
        _ => DEFAULT_SYSTEM_PROMPT,
    };
    ChatTemplate::new(id, system)
}

/// Resolve the named anchor set (or a custom file) against the bundle.
pub fn resolve_anchor_choice(
    bundle: &ModelBundle,
    name: &AnchorSetName,
    file: Option<&std::path::Path>,
) -> Result<ResolvedAnchors, PipelineError> {
    let set = match file {
        Some(path) => AnchorSet::from_file(path)?,
        None => AnchorSet::builtin(name).ok_or_else(|| {
            MetricError::InvalidAnchorSet(
                "anchor set `custom` needs an anchor file".into(),
            )
        })?,
    };
    Ok(text::resolve_anchors(bundle, &set)?)
}

fn score_one(
    bundle: &ModelBundle,
    template: &ChatTemplate,
    anchors: &ResolvedAnchors,
    pair: &PromptPair,
) -> Result<ScoreRecord, PipelineError> {
    let tokenized = text::tokenize_pair(bundle, template, &pair.clean, &pair.corrupted)?;
    let clean =
        bundle.forward(&ForwardRequest::new(&tokenized.clean_tokens, &tokenized.clean_mask))?;
    let corrupted = bundle.forward(&ForwardRequest::new(
        &tokenized.corrupted_tokens,
        &tokenized.corrupted_mask,
    ))?;
    let clean_score = metric::score(&clean.logits, anchors)?;
    let corrupted_score = metric::score(&corrupted.logits, anchors)?;
    let gap = metric::score_gap(&clean_score, &corrupted_score)?;
    Ok(ScoreRecord {
        pair_id: pair.id,
        condition: pair.condition,
        domain: pair.domain,
        clean_score: clean_score.score,
        corrupted_score: corrupted_score.score,
        gap,
        valid_anchor_counts: anchors.valid_counts,
    })
}

/// Score every pair in the corpus (clean and corrupted forwards, no
/// patching).
pub fn run_scores(
    bundle: &ModelBundle,
    template: &ChatTemplate,
    corpus: &Corpus,
    anchors: &ResolvedAnchors,
) -> Result<Vec<ScoreRecord>, PipelineError> {
    let mut pairs: Vec<&PromptPair> = corpus.pairs.iter().collect();
    pairs.sort_by_key(|p| (p.id, p.condition));
    pairs
        .par_iter()
        .map(|pair| score_one(bundle, template, anchors, pair))
        .collect()
}

/// Id-aligned flip records from the plain scoring runs.
pub fn flip_records_from_scores(scores: &[ScoreRecord]) -> Vec<FlipRecord> {
    let mut ids: Vec<u32> = scores.iter().map(|s| s.pair_id).collect();
    ids.sort_unstable();
    ids.dedup();
    let mut records = Vec::new();
    for id in ids {
        let good = scores
            .iter()
            .find(|s| s.pair_id == id && s.condition == Condition::GoodNews);
        let neg = scores
            .iter()
            .find(|s| s.pair_id == id && s.condition == Condition::NegativeControl);
        if let (Some(good), Some(neg)) = (good, neg) {
            records.push(FlipRecord::new(id, good.gap, neg.gap));
        }
    }
    records
}

/// Patch sweep over every pair in the corpus.
pub fn run_sweeps(
    bundle: &ModelBundle,
    template: &ChatTemplate,
    corpus: &Corpus,
    anchors: &ResolvedAnchors,
) -> Result<Vec<PatchSweepResult>, PipelineError> {
    let mut pairs: Vec<&PromptPair> = corpus.pairs.iter().collect();
    pairs.sort_by_key(|p| (p.id, p.condition));
    pairs
        .par_iter()
        .map(|pair| {
            let tokenized = text::tokenize_pair(bundle, template, &pair.clean, &pair.corrupted)?;
            let meta =
                PairMeta { pair_id: pair.id, condition: pair.condition, domain: pair.domain };
            Ok(patch::patch_sweep(bundle, &tokenized, anchors, meta)?)
        })
        .collect()
}

/// Heatmap for one (pair id, condition).
pub fn run_heatmap(
    bundle: &ModelBundle,
    template: &ChatTemplate,
    corpus: &Corpus,
    anchors: &ResolvedAnchors,
    pair_id: u32,
    condition: Condition,
) -> Result<HeatmapResult, PipelineError> {
    let pair = corpus
        .pairs
        .iter()
        .find(|p| p.id == pair_id && p.condition == condition)
        .ok_or(PipelineError::PairNotFound { pair_id, condition })?;
    let tokenized = text::tokenize_pair(bundle, template, &pair.clean, &pair.corrupted)?;
    let meta = PairMeta { pair_id: pair.id, condition: pair.condition, domain: pair.domain };
    Ok(patch::patch_heatmap(bundle, &tokenized, anchors, meta)?)
}

/// Output of one condition's steering stage.
#[derive(Debug, Clone)]
pub struct SteeringRun {
    pub direction: SteeringDirection,
    pub outcomes: Vec<SteerOutcome>,
    pub summary: AlphaSweepSummary,
}

/// Direction seed derivation from the manifest seed, per condition.
pub fn direction_seed(manifest_seed: u64, condition: Condition) -> u64 {
    match condition {
        Condition::GoodNews => manifest_seed,
        Condition::NegativeControl => manifest_seed.wrapping_add(1),
    }
}

/// For each condition present in `summaries`: extract a direction at the
/// condition's median top layer and sweep it over the neutral prompts.
pub fn run_steering(
    bundle: &ModelBundle,
    template: &ChatTemplate,
    corpus: &Corpus,
    summaries: &[ConditionSummary],
    anchors: &ResolvedAnchors,
    alphas: &[f64],
    manifest_seed: u64,
    n_direction_pairs: usize,
) -> Result<Vec<SteeringRun>, PipelineError> {
    if corpus.neutral_prompts.is_empty() {
        return Err(PipelineError::NoNeutralPrompts);
    }
    let mut runs = Vec::new();
    for summary in summaries {
        let condition = summary.condition;
        let pairs = corpus.pairs_for(condition);
        if pairs.is_empty() {
            return Err(PipelineError::NoPairsForCondition(condition));
        }
        let n_pairs = n_direction_pairs.min(pairs.len());
        let direction = steering::extract_direction(
            bundle,
            template,
            &pairs,
            summary.median_top_layer,
            n_pairs,
            direction_seed(manifest_seed, condition),
        )?;
        let (outcomes, sweep_summary) = steering::alpha_sweep(
            bundle,
            template,
            &corpus.neutral_prompts,
            &direction,
            alphas,
            anchors,
        )?;
        runs.push(SteeringRun { direction, outcomes, summary: sweep_summary });
    }
    Ok(runs)
}

/// Per-pair score gaps under each builtin anchor set, for stability
/// analysis.
pub fn run_anchor_stability(
    bundle: &ModelBundle,
    template: &ChatTemplate,
    corpus: &Corpus,
) -> Result<Vec<(String, Vec<ScoreRecord>)>, PipelineError> {
    let mut out = Vec::new();
    for set in [AnchorSet::default_set(), AnchorSet::alt1(), AnchorSet::alt2()] {
        let name = set.name.to_string();
        let resolved = text::resolve_anchors(bundle, &set)?;
        let records = run_scores(bundle, template, corpus, &resolved)?;
        out.push((name, records));
    }
    Ok(out)
}
