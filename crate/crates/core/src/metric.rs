//! Logit-gap valence score over positive/negative anchor token sets.
//!
//! The score of a next-token distribution is the mean log-probability of the
//! positive anchors minus the mean log-probability of the negative anchors.
//! Positive scores mean the distribution leans toward positive-valence
//! tokens.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Condition;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("anchor set is invalid: {0}")]
    InvalidAnchorSet(String),
    #[error("logits contain a non-finite value at index {0}")]
    NonFiniteLogits(usize),
    #[error("anchor id {0} is out of range for vocab size {1}")]
    AnchorOutOfRange(u32, usize),
    #[error("scores were computed with different anchor resolutions")]
    AnchorSetMismatch,
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("failed to read anchor file {path}: {reason}")]
    AnchorFile { path: String, reason: String },
}

/// Identifier for a named anchor set.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorSetName {
    Default,
    Alt1,
    Alt2,
    Custom,
}

impl std::fmt::Display for AnchorSetName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            AnchorSetName::Default => "default",
            AnchorSetName::Alt1 => "alt1",
            AnchorSetName::Alt2 => "alt2",
            AnchorSetName::Custom => "custom",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for AnchorSetName {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "default" => Ok(AnchorSetName::Default),
            "alt1" => Ok(AnchorSetName::Alt1),
            "alt2" => Ok(AnchorSetName::Alt2),
            "custom" => Ok(AnchorSetName::Custom),
            other => Err(format!("unknown anchor set `{other}`")),
        }
    }
}

/// Named positive/negative anchor word lists.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnchorSet {
    pub name: AnchorSetName,
    pub positive: Vec<String>,
    pub negative: Vec<String>,
}

impl AnchorSet {
    pub fn new(
        name: AnchorSetName,
        positive: Vec<String>,
        negative: Vec<String>,
    ) -> Result<Self, MetricError> {
        if positive.is_empty() || negative.is_empty() {
            return Err(MetricError::InvalidAnchorSet(
                "both anchor sides must be non-empty".into(),
            ));
        }
        for word in &positive {
            if negative.contains(word) {
                return Err(MetricError::InvalidAnchorSet(format!(
                    "word {word:?} appears on both sides"
                )));
            }
        }
        Ok(AnchorSet { name, positive, negative })
    }

    fn from_words(name: AnchorSetName, positive: &[&str], negative: &[&str]) -> Self {
        AnchorSet::new(
            name,
            positive.iter().map(|s| s.to_string()).collect(),
            negative.iter().map(|s| s.to_string()).collect(),
        )
        .expect("builtin anchor sets are valid")
    }

    pub fn default_set() -> Self {
        Self::from_words(
            AnchorSetName::Default,
            &[
                "congratulations", "happy", "glad", "wonderful", "amazing", "thrilled", "proud",
                "fantastic", "excellent",
            ],
            &["okay", "noted", "fine", "ordinary", "received", "sorry"],
        )
    }

    pub fn alt1() -> Self {
        Self::from_words(
            AnchorSetName::Alt1,
            &[
                "great", "awesome", "excited", "delighted", "superb", "impressive", "brilliant",
                "pleased", "overjoyed", "lucky",
            ],
            &["unfortunately", "sadly", "regret", "disappointing", "difficult", "tough"],
        )
    }

    pub fn alt2() -> Self {
        Self::from_words(
            AnchorSetName::Alt2,
            &[
                "celebrate", "congratulate", "achievement", "success", "earned", "deserve",
                "outstanding", "remarkable", "triumph",
            ],
            &["failed", "rejected", "denied", "missed", "lost", "unfortunate"],
        )
    }

    pub fn builtin(name: &AnchorSetName) -> Option<Self> {
        match name {
            AnchorSetName::Default => Some(Self::default_set()),
            AnchorSetName::Alt1 => Some(Self::alt1()),
            AnchorSetName::Alt2 => Some(Self::alt2()),
            AnchorSetName::Custom => None,
        }
    }

    /// Load a custom anchor set from a JSON file with `positive` and
    /// `negative` word lists.
    pub fn from_file(path: &std::path::Path) -> Result<Self, MetricError> {
        #[derive(Deserialize)]
        struct FileSet {
            positive: Vec<String>,
            negative: Vec<String>,
        }
        let text = std::fs::read_to_string(path).map_err(|e| MetricError::AnchorFile {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let parsed: FileSet = serde_json::from_str(&text).map_err(|e| MetricError::AnchorFile {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        AnchorSet::new(AnchorSetName::Custom, parsed.positive, parsed.negative)
    }
}

/// Model-specific single-token resolution of an anchor set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolvedAnchors {
    pub positive_ids: Vec<u32>,
    pub negative_ids: Vec<u32>,
    /// (valid positive anchors, valid negative anchors) after single-token
    /// filtering; carried into every result record.
    pub valid_counts: (usize, usize),
    pub source_set: AnchorSetName,
}

impl ResolvedAnchors {
    /// Cheap fingerprint used to detect anchor mismatches between scores.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        mix(self.positive_ids.len() as u64);
        for &id in &self.positive_ids {
            mix(id as u64 + 1);
        }
        mix(0xffff);
        for &id in &self.negative_ids {
            mix(id as u64 + 1);
        }
        h
    }
}

/// A computed valence score, in nats.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValenceScore {
    pub score: f64,
    pub per_anchor_logprobs: Option<BTreeMap<u32, f64>>,
    anchor_fingerprint: u64,
}

impl ValenceScore {
    pub fn anchor_fingerprint(&self) -> u64 {
        self.anchor_fingerprint
    }
}

/// Log-softmax at the anchor ids, computed in f64 with max-subtraction.
/// Returns mean positive log-probability minus mean negative
/// log-probability.
pub fn score(logits: &[f32], anchors: &ResolvedAnchors) -> Result<ValenceScore, MetricError> {
    let upcast: Vec<f64> = logits.iter().map(|&v| v as f64).collect();
    score_f64(&upcast, anchors)
}

/// [`score`] over f64 logits; the f32 entry point upcasts into this.
pub fn score_f64(logits: &[f64], anchors: &ResolvedAnchors) -> Result<ValenceScore, MetricError> {
    if let Some(idx) = logits.iter().position(|v| !v.is_finite()) {
        return Err(MetricError::NonFiniteLogits(idx));
    }
    for &id in anchors.positive_ids.iter().chain(&anchors.negative_ids) {
        if id as usize >= logits.len() {
            return Err(MetricError::AnchorOutOfRange(id, logits.len()));
        }
    }

    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();

    let mut per_anchor = BTreeMap::new();
    let mut side_mean = |ids: &[u32]| -> f64 {
        let mut total = 0.0;
        for &id in ids {
            let lp = logits[id as usize] - log_z;
            per_anchor.insert(id, lp);
            total += lp;
        }
        total / ids.len() as f64
    };
    let pos_mean = side_mean(&anchors.positive_ids);
    let neg_mean = side_mean(&anchors.negative_ids);

    Ok(ValenceScore {
        score: pos_mean - neg_mean,
        per_anchor_logprobs: Some(per_anchor),
        anchor_fingerprint: anchors.fingerprint(),
    })
}

/// Clean-minus-corrupted score gap. Errors if the two scores were computed
/// with different anchor resolutions.
pub fn score_gap(clean: &ValenceScore, corrupted: &ValenceScore) -> Result<f64, MetricError> {
    if clean.anchor_fingerprint != corrupted.anchor_fingerprint {
        return Err(MetricError::AnchorSetMismatch);
    }
    Ok(clean.score - corrupted.score)
}

/// Fraction of gaps with the correct sign for the condition: strictly
/// positive for good news, strictly negative for the negative control.
/// Zero gaps count as incorrect.
pub fn sign_accuracy(gaps: &[f64], condition: Condition) -> Result<f64, MetricError> {
    if gaps.is_empty() {
        return Err(MetricError::EmptyInput("sign_accuracy needs at least one gap"));
    }
    let correct = gaps
        .iter()
        .filter(|&&g| match condition {
            Condition::GoodNews => g > 0.0,
            Condition::NegativeControl => g < 0.0,
        })
        .count();
    Ok(correct as f64 / gaps.len() as f64)
}
