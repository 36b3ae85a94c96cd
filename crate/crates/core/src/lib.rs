//! Causal analysis of emotional valence in decoder-only transformers.
//!
//! The library runs hookable forward passes over small (or real) decoder-only
//! models, measures emotional lean with a logit-gap score over anchor tokens,
//! localizes the valence signal with residual-stream activation patching,
//! validates valence-specificity with a flip test, and extracts/injects
//! linear steering directions. Statistical reporting (Mann-Whitney U,
//! Spearman rank correlation) and deterministic SVG figures round out the
//! experiment pipeline.
//!
//! Main entry points:
//! - [`model::make_toy_model`] / [`model::load_model`] build a [`model::ModelBundle`]
//! - [`model::ModelBundle::forward`] runs one hooked forward pass
//! - [`patch::patch_sweep`] / [`patch::patch_heatmap`] run the patching experiments
//! - [`steering::extract_direction`] / [`steering::alpha_sweep`] run the steering loop
//! - [`pipeline`] wires whole experiment stages together for the CLI

pub mod corpus;
pub mod flip;
pub mod manifest;
pub mod metric;
pub mod model;
pub mod output;
pub mod patch;
pub mod pipeline;
pub mod report;
pub mod stats;
pub mod steering;
pub mod svg;
pub mod text;

use serde::{Deserialize, Serialize};

/// Experimental condition of a prompt pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    GoodNews,
    NegativeControl,
}

impl Condition {
    pub fn as_str(&self) -> &'static str {
        match self {
            Condition::GoodNews => "good_news",
            Condition::NegativeControl => "negative_control",
        }
    }
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Condition {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "good_news" => Ok(Condition::GoodNews),
            "negative_control" => Ok(Condition::NegativeControl),
            other => Err(format!("unknown condition `{other}`")),
        }
    }
}

/// Topic domain of a prompt pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Academia,
    Career,
    Personal,
}

impl Domain {
    pub const ALL: [Domain; 3] = [Domain::Academia, Domain::Career, Domain::Personal];

    pub fn as_str(&self) -> &'static str {
        match self {
            Domain::Academia => "academia",
            Domain::Career => "career",
            Domain::Personal => "personal",
        }
    }
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Domain {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "academia" => Ok(Domain::Academia),
            "career" => Ok(Domain::Career),
            "personal" => Ok(Domain::Personal),
            other => Err(format!("unknown domain `{other}`")),
        }
    }
}
