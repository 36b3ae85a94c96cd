//! Report tables: every statistic the experiment tabulates, grouped overall
//! or by domain. Empty groups produce flagged rows rather than disappearing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flip::{self, FlipRecord};
use crate::metric;
use crate::patch::PatchSweepResult;
use crate::stats::{self, StatsError};
use crate::steering::AlphaSweepSummary;
use crate::{Condition, Domain};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    Overall,
    ByDomain,
}

impl std::str::FromStr for Grouping {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "overall" => Ok(Grouping::Overall),
            "by_domain" => Ok(Grouping::ByDomain),
            other => Err(format!("unknown grouping `{other}`")),
        }
    }
}

/// Per-pair scoring record (the inputs to the score table).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub pair_id: u32,
    pub condition: Condition,
    pub domain: Domain,
    pub clean_score: f64,
    pub corrupted_score: f64,
    pub gap: f64,
    pub valid_anchor_counts: (usize, usize),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreRow {
    pub condition: Condition,
    pub n: usize,
    pub mean_gap: f64,
    pub sign_accuracy: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopLayerTestRow {
    /// "overall" or a domain name.
    pub scope: String,
    pub n_good: usize,
    pub n_neg: usize,
    pub u_statistic: f64,
    pub p_value: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub condition: Condition,
    pub n: usize,
    /// Spearman rho between |max_patch_effect| and gap.
    pub rho: f64,
    pub p_value: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SteeringRow {
    pub condition: Condition,
    pub layer: usize,
    pub n_prompts: usize,
    /// Fraction of prompts with delta > 0 at alpha = +10.
    pub pct_shifted_positive: Option<f64>,
    /// Fraction of prompts with delta < 0 at alpha = -10.
    pub pct_shifted_negative: Option<f64>,
    pub mean_delta_at_plus10: Option<f64>,
    pub spearman_rho: f64,
    pub spearman_p: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlipRow {
    pub n: usize,
    pub flip_rate: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ReportTables {
    pub scores: Vec<ScoreRow>,
    pub flip: Option<FlipRow>,
    pub top_layer_tests: Vec<TopLayerTestRow>,
    pub correlations: Vec<CorrelationRow>,
    pub steering: Vec<SteeringRow>,
}

fn score_row(records: &[&ScoreRecord], condition: Condition) -> ScoreRow {
    let gaps: Vec<f64> = records.iter().map(|r| r.gap).collect();
    if gaps.is_empty() {
        return ScoreRow { condition, n: 0, mean_gap: f64::NAN, sign_accuracy: f64::NAN, flagged: true };
    }
    let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
    let sign_accuracy = metric::sign_accuracy(&gaps, condition).expect("non-empty");
    ScoreRow { condition, n: gaps.len(), mean_gap, sign_accuracy, flagged: false }
}

fn top_layer_row(scope: String, good: &[f64], neg: &[f64]) -> TopLayerTestRow {
    if good.is_empty() || neg.is_empty() {
        return TopLayerTestRow {
            scope,
            n_good: good.len(),
            n_neg: neg.len(),
            u_statistic: f64::NAN,
            p_value: f64::NAN,
            flagged: true,
        };
    }
    let r = stats::mann_whitney_one_sided(good, neg).expect("non-empty samples");
    TopLayerTestRow {
        scope,
        n_good: good.len(),
        n_neg: neg.len(),
        u_statistic: r.u_statistic,
        p_value: r.p_value,
        flagged: r.degenerate,
    }
}

fn correlation_row(sweeps: &[&PatchSweepResult], condition: Condition) -> CorrelationRow {
    let xs: Vec<f64> = sweeps.iter().map(|s| s.max_patch_effect.abs()).collect();
    let ys: Vec<f64> = sweeps.iter().map(|s| s.gap).collect();
    match stats::spearman(&xs, &ys) {
        Ok(r) => CorrelationRow {
            condition,
            n: r.n,
            rho: r.rho,
            p_value: r.p_value,
            flagged: r.degenerate,
        },
        Err(_) => CorrelationRow {
            condition,
            n: xs.len(),
            rho: f64::NAN,
            p_value: f64::NAN,
            flagged: true,
        },
    }
}

fn steering_row(summary: &AlphaSweepSummary) -> SteeringRow {
    let at = |alpha: f64| summary.per_alpha.iter().find(|a| (a.alpha - alpha).abs() < 1e-9);
    let plus = at(10.0);
    let minus = at(-10.0);
    SteeringRow {
        condition: summary.condition,
        layer: summary.layer,
        n_prompts: summary.n_prompts,
        pct_shifted_positive: plus.map(|a| a.pct_shifted_positive),
        pct_shifted_negative: minus.map(|a| a.pct_shifted_negative),
        mean_delta_at_plus10: plus.map(|a| a.mean_delta),
        spearman_rho: summary.spearman_alpha_delta.rho,
        spearman_p: summary.spearman_alpha_delta.p_value,
        flagged: summary.spearman_alpha_delta.degenerate || plus.is_none() || minus.is_none(),
    }
}

/// Assemble every tabulated statistic from one model's stage outputs.
pub fn condition_report(
    scores: &[ScoreRecord],
    sweeps: &[PatchSweepResult],
    flips: &[FlipRecord],
    steering: &[AlphaSweepSummary],
    grouping: Grouping,
) -> ReportTables {
    let mut tables = ReportTables::default();

    if !scores.is_empty() {
        for condition in [Condition::GoodNews, Condition::NegativeControl] {
            let records: Vec<&ScoreRecord> =
                scores.iter().filter(|r| r.condition == condition).collect();
            tables.scores.push(score_row(&records, condition));
        }
    }

    if !flips.is_empty() {
        let rate = flip::flip_rate(flips).expect("non-empty");
        tables.flip = Some(FlipRow { n: flips.len(), flip_rate: rate, flagged: false });
    }

    if !sweeps.is_empty() {
        let layers = |condition: Condition, domain: Option<Domain>| -> Vec<f64> {
            sweeps
                .iter()
                .filter(|s| s.condition == condition && domain.map_or(true, |d| s.domain == d))
                .map(|s| s.top_layer as f64)
                .collect()
        };
        tables.top_layer_tests.push(top_layer_row(
            "overall".into(),
            &layers(Condition::GoodNews, None),
            &layers(Condition::NegativeControl, None),
        ));
        if grouping == Grouping::ByDomain {
            for domain in Domain::ALL {
                tables.top_layer_tests.push(top_layer_row(
                    domain.as_str().to_string(),
                    &layers(Condition::GoodNews, Some(domain)),
                    &layers(Condition::NegativeControl, Some(domain)),
                ));
            }
        }
        for condition in [Condition::GoodNews, Condition::NegativeControl] {
            let group: Vec<&PatchSweepResult> =
                sweeps.iter().filter(|s| s.condition == condition).collect();
            tables.correlations.push(correlation_row(&group, condition));
        }
    }

    for summary in steering {
        tables.steering.push(steering_row(summary));
    }

    tables
}

/// Pairwise anchor-set stability: mean gaps per set plus Spearman rank
/// correlations of the per-pair gaps between sets, per condition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnchorStabilityRow {
    pub condition: Condition,
    pub set_a: String,
    pub set_b: String,
    pub n: usize,
    pub mean_gap_a: f64,
    pub mean_gap_b: f64,
    pub rho: f64,
    pub p_value: f64,
    pub flagged: bool,
}

/// Correlate per-pair gaps across anchor sets. `gaps_by_set` holds
/// (set name, records) with identical pair coverage.
pub fn anchor_stability(
    gaps_by_set: &[(String, Vec<ScoreRecord>)],
) -> Vec<AnchorStabilityRow> {
    let mut rows = Vec::new();
    for i in 0..gaps_by_set.len() {
        for j in i + 1..gaps_by_set.len() {
            let (name_a, recs_a) = &gaps_by_set[i];
            let (name_b, recs_b) = &gaps_by_set[j];
            for condition in [Condition::GoodNews, Condition::NegativeControl] {
                let mut pairs: Vec<(f64, f64)> = Vec::new();
                for ra in recs_a.iter().filter(|r| r.condition == condition) {
                    if let Some(rb) = recs_b
                        .iter()
                        .find(|r| r.pair_id == ra.pair_id && r.condition == condition)
                    {
                        pairs.push((ra.gap, rb.gap));
                    }
                }
                let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
                let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
                let (rho, p_value, flagged) = match stats::spearman(&xs, &ys) {
                    Ok(r) => (r.rho, r.p_value, r.degenerate),
                    Err(_) => (f64::NAN, f64::NAN, true),
                };
                let mean = |v: &[f64]| {
                    if v.is_empty() {
                        f64::NAN
                    } else {
                        v.iter().sum::<f64>() / v.len() as f64
                    }
                };
                rows.push(AnchorStabilityRow {
                    condition,
                    set_a: name_a.clone(),
                    set_b: name_b.clone(),
                    n: xs.len(),
                    mean_gap_a: mean(&xs),
                    mean_gap_b: mean(&ys),
                    rho,
                    p_value,
                    flagged,
                });
            }
        }
    }
    rows
}

/// Emit the tables as delimited text, one file per table, column-for-column
/// with the structured records.
pub fn write_table_files(
    tables: &ReportTables,
    dir: &std::path::Path,
    manifest_hash: &str,
) -> std::io::Result<()> {
    use crate::output::{format_f64, format_opt, write_tsv};

    let score_rows: Vec<Vec<String>> = tables
        .scores
        .iter()
        .map(|r| {
            vec![
                r.condition.to_string(),
                r.n.to_string(),
                format_f64(r.mean_gap),
                format_f64(r.sign_accuracy),
                r.flagged.to_string(),
            ]
        })
        .collect();
    write_tsv(
        &dir.join("scores.tsv"),
        manifest_hash,
        &["condition", "n", "mean_gap", "sign_accuracy", "flagged"],
        &score_rows,
    )?;

    let flip_rows: Vec<Vec<String>> = tables
        .flip
        .iter()
        .map(|r| vec![r.n.to_string(), format_f64(r.flip_rate), r.flagged.to_string()])
        .collect();
    write_tsv(&dir.join("flip.tsv"), manifest_hash, &["n", "flip_rate", "flagged"], &flip_rows)?;

    let test_rows: Vec<Vec<String>> = tables
        .top_layer_tests
        .iter()
        .map(|r| {
            vec![
                r.scope.clone(),
                r.n_good.to_string(),
                r.n_neg.to_string(),
                format_f64(r.u_statistic),
                format_f64(r.p_value),
                r.flagged.to_string(),
            ]
        })
        .collect();
    write_tsv(
        &dir.join("top_layer_tests.tsv"),
        manifest_hash,
        &["scope", "n_good", "n_neg", "u_statistic", "p_value", "flagged"],
        &test_rows,
    )?;

    let corr_rows: Vec<Vec<String>> = tables
        .correlations
        .iter()
        .map(|r| {
            vec![
                r.condition.to_string(),
                r.n.to_string(),
                format_f64(r.rho),
                format_f64(r.p_value),
                r.flagged.to_string(),
            ]
        })
        .collect();
    write_tsv(
        &dir.join("correlations.tsv"),
        manifest_hash,
        &["condition", "n", "rho", "p_value", "flagged"],
        &corr_rows,
    )?;

    let steer_rows: Vec<Vec<String>> = tables
        .steering
        .iter()
        .map(|r| {
            vec![
                r.condition.to_string(),
                r.layer.to_string(),
                r.n_prompts.to_string(),
                format_opt(r.pct_shifted_positive),
                format_opt(r.pct_shifted_negative),
                format_opt(r.mean_delta_at_plus10),
                format_f64(r.spearman_rho),
                format_f64(r.spearman_p),
                r.flagged.to_string(),
            ]
        })
        .collect();
    write_tsv(
        &dir.join("steering.tsv"),
        manifest_hash,
        &[
            "condition",
            "layer",
            "n_prompts",
            "pct_shifted_positive",
            "pct_shifted_negative",
            "mean_delta_at_plus10",
            "spearman_rho",
            "spearman_p",
            "flagged",
        ],
        &steer_rows,
    )?;
    Ok(())
}

pub fn write_anchor_stability(
    rows: &[AnchorStabilityRow],
    path: &std::path::Path,
    manifest_hash: &str,
) -> std::io::Result<()> {
    use crate::output::{format_f64, write_tsv};
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.condition.to_string(),
                r.set_a.clone(),
                r.set_b.clone(),
                r.n.to_string(),
                format_f64(r.mean_gap_a),
                format_f64(r.mean_gap_b),
                format_f64(r.rho),
                format_f64(r.p_value),
                r.flagged.to_string(),
            ]
        })
        .collect();
    write_tsv(
        path,
        manifest_hash,
        &["condition", "set_a", "set_b", "n", "mean_gap_a", "mean_gap_b", "rho", "p_value", "flagged"],
        &table,
    )
}
