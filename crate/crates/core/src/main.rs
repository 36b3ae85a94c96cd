//! Command-line driver for the valence experiments.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use vallens::corpus::{self, Corpus};
use vallens::flip::FlipRecord;
use vallens::manifest::{RunManifest, StageToggles};
use vallens::metric::AnchorSetName;
use vallens::model::{
    self, load_model, make_toy_model, MlpKind, ModelBundle, ModelConfig, ModelFamily, NormKind,
    PositionEncoding, Precision,
};
use vallens::patch::{self, ConditionSummary, PatchSweepResult};
use vallens::pipeline::{self, SteeringRun};
use vallens::report::{self, Grouping, ReportTables, ScoreRecord};
use vallens::steering::{SteeringDirection, DEFAULT_ALPHAS};
use vallens::svg;
use vallens::text::ChatTemplate;
use vallens::{output, Condition};

#[derive(Parser)]
#[command(name = "vallens", version, about = "Valence localization and steering experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Model directory (weight file + config descriptor).
    #[arg(long)]
    model: PathBuf,
    /// Force a model family instead of auto-detecting.
    #[arg(long)]
    family: Option<String>,
    /// Storage precision for the loaded weights.
    #[arg(long, default_value = "full")]
    precision: String,
}

#[derive(Args, Clone)]
struct AnchorArgs {
    /// Builtin anchor set: default | alt1 | alt2 | custom.
    #[arg(long, default_value = "default")]
    anchor_set: String,
    /// JSON file with custom positive/negative anchor lists.
    #[arg(long)]
    anchor_file: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a corpus file (pairs, shared baselines, neutral prompts).
    ValidateCorpus {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Write a seeded toy model to a directory.
    MakeToyModel {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        layers: usize,
        #[arg(long, default_value_t = 64)]
        d_model: usize,
        #[arg(long, default_value_t = 4)]
        n_heads: usize,
        #[arg(long)]
        n_kv_heads: Option<usize>,
        #[arg(long, default_value_t = 128)]
        d_mlp: usize,
        #[arg(long, default_value_t = 128)]
        vocab: usize,
        #[arg(long, default_value = "rotary")]
        position_encoding: String,
        #[arg(long, default_value = "rmsnorm")]
        norm: String,
        #[arg(long, default_value = "gated_silu")]
        mlp: String,
        #[arg(long, default_value_t = 512)]
        max_seq_len: usize,
        #[arg(long, default_value = "full")]
        precision: String,
    },
    /// Score every prompt pair (inputs to the score table).
    Score {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        anchors: AnchorArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also compute gaps under all builtin anchor sets and emit the
        /// stability table.
        #[arg(long)]
        stability: bool,
    },
    /// Residual-stream patch sweep over every pair.
    PatchSweep {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        anchors: AnchorArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Layer-by-position patch heatmap for one pair.
    Heatmap {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        anchors: AnchorArgs,
        #[arg(long)]
        pair_id: u32,
        #[arg(long)]
        condition: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Flip test over id-aligned condition pairs.
    FlipTest {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        anchors: AnchorArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Extract a steering direction for one condition.
    ExtractDirection {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        anchors: AnchorArgs,
        #[arg(long)]
        condition: String,
        /// Extraction layer; defaults to the condition's median top layer
        /// from a fresh patch sweep.
        #[arg(long)]
        layer: Option<usize>,
        #[arg(long, default_value_t = 50)]
        n_pairs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply a stored direction to the neutral prompts across an alpha
    /// sweep.
    Steer {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        anchors: AnchorArgs,
        /// Direction file written by extract-direction.
        #[arg(long)]
        direction: PathBuf,
        /// Comma-separated alpha values.
        #[arg(long)]
        alphas: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Rebuild report tables from result files in a run directory.
    Stats {
        /// Run directory holding scores.jsonl / sweeps.jsonl / ...
        #[arg(long, value_name = "DIR")]
        run: PathBuf,
        #[arg(long, default_value = "by_domain")]
        grouping: String,
    },
    /// Run the full pipeline: scores, flips, sweeps, steering, tables,
    /// figures.
    Report {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        anchors: AnchorArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        alphas: Option<String>,
        #[arg(long, default_value_t = 50)]
        n_direction_pairs: usize,
        #[arg(long, default_value = "by_domain")]
        grouping: String,
        #[arg(long)]
        stability: bool,
        #[arg(long)]
        skip_patch: bool,
        #[arg(long)]
        skip_steer: bool,
        #[arg(long)]
        skip_figures: bool,
        #[arg(long)]
        skip_stats: bool,
    },
}

fn parse_alphas(s: Option<&str>) -> Result<Vec<f64>> {
    match s {
        None => Ok(DEFAULT_ALPHAS.to_vec()),
        Some(s) => s
            .split(',')
            .map(|tok| tok.trim().parse::<f64>().with_context(|| format!("bad alpha `{tok}`")))
            .collect(),
    }
}

fn load_bundle(args: &ModelArgs) -> Result<ModelBundle> {
    let family = match &args.family {
        Some(f) => Some(f.parse::<ModelFamily>().map_err(anyhow::Error::msg)?),
        None => None,
    };
    let precision: Precision = args.precision.parse().map_err(anyhow::Error::msg)?;
    let bundle = load_model(&args.model, family)
        .with_context(|| format!("loading model from {}", args.model.display()))?;
    Ok(bundle.into_precision(precision))
}

fn anchor_name(args: &AnchorArgs) -> Result<AnchorSetName> {
    if args.anchor_file.is_some() {
        return Ok(AnchorSetName::Custom);
    }
    args.anchor_set.parse::<AnchorSetName>().map_err(anyhow::Error::msg)
}

/// Manifest for one CLI invocation; hash goes into every output file.
#[allow(clippy::too_many_arguments)]
fn build_manifest(
    model: &ModelArgs,
    corpus: &Path,
    anchors: &AnchorArgs,
    seed: u64,
    alphas: &[f64],
    n_direction_pairs: usize,
    out: &Path,
    stages: StageToggles,
) -> Result<RunManifest> {
    Ok(RunManifest {
        model: model.model.display().to_string(),
        corpus: corpus.display().to_string(),
        anchor_set: anchor_name(anchors)?.to_string(),
        anchor_file: anchors.anchor_file.as_ref().map(|p| p.display().to_string()),
        seed,
        alphas: alphas.to_vec(),
        precision: model.precision.parse().map_err(anyhow::Error::msg)?,
        n_direction_pairs,
        out_dir: out.display().to_string(),
        stages,
    })
}

struct Stage<'a> {
    bundle: ModelBundle,
    template: ChatTemplate,
    anchors: vallens::metric::ResolvedAnchors,
    corpus: Corpus,
    manifest: RunManifest,
    hash: String,
    out: &'a Path,
}

fn prepare<'a>(
    model: &ModelArgs,
    corpus_path: &Path,
    anchor_args: &AnchorArgs,
    seed: u64,
    alphas: &[f64],
    n_direction_pairs: usize,
    out: &'a Path,
    stages: StageToggles,
) -> Result<Stage<'a>> {
    let bundle = load_bundle(model)?;
    let corpus = corpus::load_corpus(corpus_path)
        .with_context(|| format!("loading corpus from {}", corpus_path.display()))?;
    let template = pipeline::experiment_template(&bundle);
    let anchors = pipeline::resolve_anchor_choice(
        &bundle,
        &anchor_name(anchor_args)?,
        anchor_args.anchor_file.as_deref(),
    )?;
    let manifest =
        build_manifest(model, corpus_path, anchor_args, seed, alphas, n_direction_pairs, out, stages)?;
    let hash = manifest.hash();
    std::fs::create_dir_all(out)?;
    manifest.save(out)?;
    Ok(Stage { bundle, template, anchors, corpus, manifest, hash, out })
}

fn write_scores(stage: &Stage, scores: &[ScoreRecord]) -> Result<()> {
    output::write_jsonl(&stage.out.join("scores.jsonl"), &stage.hash, "scores.v1", scores)?;
    Ok(())
}

fn write_flips(stage: &Stage, flips: &[FlipRecord]) -> Result<()> {
    output::write_jsonl(&stage.out.join("flips.jsonl"), &stage.hash, "flips.v1", flips)?;
    Ok(())
}

fn write_sweeps(stage: &Stage, sweeps: &[PatchSweepResult]) -> Result<()> {
    output::write_jsonl(&stage.out.join("sweeps.jsonl"), &stage.hash, "sweeps.v1", sweeps)?;
    // Flat (pair, condition, domain, layer, effect) table for plotting.
    let mut rows = Vec::new();
    for sweep in sweeps {
        for (layer, &effect) in sweep.per_layer_effect.iter().enumerate() {
            rows.push(vec![
                sweep.pair_id.to_string(),
                sweep.condition.to_string(),
                sweep.domain.to_string(),
                layer.to_string(),
                output::format_f64(effect),
            ]);
        }
    }
    output::write_tsv(
        &stage.out.join("sweep_effects.tsv"),
        &stage.hash,
        &["pair_id", "condition", "domain", "layer", "effect"],
        &rows,
    )?;
    Ok(())
}

fn summaries_of(sweeps: &[PatchSweepResult]) -> Result<Vec<ConditionSummary>> {
    let mut summaries = Vec::new();
    for condition in [Condition::GoodNews, Condition::NegativeControl] {
        let group: Vec<PatchSweepResult> =
            sweeps.iter().filter(|s| s.condition == condition).cloned().collect();
        if !group.is_empty() {
            summaries.push(patch::summarize_sweeps(&group)?);
        }
    }
    Ok(summaries)
}

fn write_steering(stage: &Stage, runs: &[SteeringRun]) -> Result<()> {
    let dir = stage.out.join("directions");
    std::fs::create_dir_all(&dir)?;
    #[derive(serde::Serialize)]
    struct DirectionFile<'a> {
        manifest_hash: &'a str,
        #[serde(flatten)]
        direction: &'a SteeringDirection,
    }
    #[derive(serde::Serialize)]
    struct SteerRecord<'a> {
        condition: Condition,
        layer: usize,
        #[serde(flatten)]
        outcome: &'a vallens::steering::SteerOutcome,
    }
    let mut records = Vec::new();
    for run in runs {
        let path = dir.join(format!("direction_{}.json", run.direction.condition));
        let text = serde_json::to_string_pretty(&DirectionFile {
            manifest_hash: &stage.hash,
            direction: &run.direction,
        })?;
        std::fs::write(path, text)?;
        for outcome in &run.outcomes {
            records.push(serde_json::to_value(SteerRecord {
                condition: run.direction.condition,
                layer: run.direction.layer,
                outcome,
            })?);
        }
    }
    output::write_jsonl(&stage.out.join("steer_outcomes.jsonl"), &stage.hash, "steer.v1", &records)?;
    let summaries: Vec<_> = runs.iter().map(|r| r.summary.clone()).collect();
    output::write_json(
        &stage.out.join("steering_summaries.json"),
        &stage.hash,
        "steer-summaries.v1",
        &summaries,
    )?;
    Ok(())
}

fn write_tables(stage: &Stage, tables: &ReportTables) -> Result<()> {
    let dir = stage.out.join("tables");
    std::fs::create_dir_all(&dir)?;
    report::write_table_files(tables, &dir, &stage.hash)?;
    output::write_json(&stage.out.join("report.json"), &stage.hash, "report.v1", tables)?;
    Ok(())
}

fn write_figures(
    stage: &Stage,
    summaries: &[ConditionSummary],
) -> Result<()> {
    let dir = stage.out.join("figures");
    std::fs::create_dir_all(&dir)?;
    svg::emit_layer_scatter(summaries, &stage.hash, &dir.join("layer_scatter.svg"))?;
    // One heatmap per condition for the lowest pair id present.
    for condition in [Condition::GoodNews, Condition::NegativeControl] {
        let Some(pair_id) = stage
            .corpus
            .pairs_for(condition)
            .first()
            .map(|p| p.id)
        else {
            continue;
        };
        let heatmap = pipeline::run_heatmap(
            &stage.bundle,
            &stage.template,
            &stage.corpus,
            &stage.anchors,
            pair_id,
            condition,
        )?;
        svg::emit_heatmap_svg(
            &heatmap,
            &stage.hash,
            &dir.join(format!("heatmap_{condition}.svg")),
        )?;
    }
    Ok(())
}

fn cmd_report(stage: &Stage, grouping: Grouping, stability: bool) -> Result<()> {
    let stages = stage.manifest.stages.clone();
    let mut scores: Vec<ScoreRecord> = Vec::new();
    let mut flips: Vec<FlipRecord> = Vec::new();
    let mut sweeps: Vec<PatchSweepResult> = Vec::new();
    let mut steering_runs: Vec<SteeringRun> = Vec::new();

    if stages.score {
        scores = pipeline::run_scores(&stage.bundle, &stage.template, &stage.corpus, &stage.anchors)?;
        write_scores(stage, &scores)?;
        eprintln!("scored {} pairs", scores.len());
        if stages.flip {
            flips = pipeline::flip_records_from_scores(&scores);
            write_flips(stage, &flips)?;
            eprintln!("flip records: {}", flips.len());
        }
    }

    let mut summaries: Vec<ConditionSummary> = Vec::new();
    if stages.patch {
        sweeps = pipeline::run_sweeps(&stage.bundle, &stage.template, &stage.corpus, &stage.anchors)?;
        write_sweeps(stage, &sweeps)?;
        summaries = summaries_of(&sweeps)?;
        output::write_json(
            &stage.out.join("summaries.json"),
            &stage.hash,
            "sweep-summaries.v1",
            &summaries,
        )?;
        eprintln!("patch sweeps: {}", sweeps.len());
    }

    if stages.steer && !summaries.is_empty() {
        steering_runs = pipeline::run_steering(
            &stage.bundle,
            &stage.template,
            &stage.corpus,
            &summaries,
            &stage.anchors,
            &stage.manifest.alphas,
            stage.manifest.seed,
            stage.manifest.n_direction_pairs,
        )?;
        write_steering(stage, &steering_runs)?;
        eprintln!("steering runs: {}", steering_runs.len());
    }

    if stages.figures && !summaries.is_empty() {
        write_figures(stage, &summaries)?;
        eprintln!("figures written");
    }

    if stages.stats {
        let steer_summaries: Vec<_> = steering_runs.iter().map(|r| r.summary.clone()).collect();
        let tables = report::condition_report(&scores, &sweeps, &flips, &steer_summaries, grouping);
        write_tables(stage, &tables)?;
        eprintln!("tables written");
    }

    if stability {
        let by_set =
            pipeline::run_anchor_stability(&stage.bundle, &stage.template, &stage.corpus)?;
        let rows = report::anchor_stability(&by_set);
        report::write_anchor_stability(&rows, &stage.out.join("anchor_stability.tsv"), &stage.hash)?;
        eprintln!("anchor stability written");
    }

    Ok(())
}

fn cmd_stats(run: &Path, grouping: Grouping) -> Result<()> {
    let manifest = RunManifest::load(&run.join("manifest.json"))
        .with_context(|| format!("no manifest.json under {}", run.display()))?;
    let hash = manifest.hash();
    let read_or_empty = |name: &str, schema: &str| -> Result<Vec<serde_json::Value>> {
        let path = run.join(name);
        if path.exists() {
            Ok(output::read_jsonl(&path, schema)?.1)
        } else {
            Ok(Vec::new())
        }
    };
    let scores: Vec<ScoreRecord> = read_or_empty("scores.jsonl", "scores.v1")?
        .into_iter()
        .map(serde_json::from_value)
        .collect::<Result<_, _>>()?;
    let flips: Vec<FlipRecord> = read_or_empty("flips.jsonl", "flips.v1")?
        .into_iter()
        .map(serde_json::from_value)
        .collect::<Result<_, _>>()?;
    let sweeps: Vec<PatchSweepResult> = read_or_empty("sweeps.jsonl", "sweeps.v1")?
        .into_iter()
        .map(serde_json::from_value)
        .collect::<Result<_, _>>()?;
    let steer_summaries: Vec<vallens::steering::AlphaSweepSummary> = {
        let path = run.join("steering_summaries.json");
        if path.exists() {
            output::read_json(&path, "steer-summaries.v1")?
        } else {
            Vec::new()
        }
    };

    let tables = report::condition_report(&scores, &sweeps, &flips, &steer_summaries, grouping);
    let dir = run.join("tables");
    std::fs::create_dir_all(&dir)?;
    report::write_table_files(&tables, &dir, &hash)?;
    output::write_json(&run.join("report.json"), &hash, "report.v1", &tables)?;
    println!("tables rebuilt under {}", dir.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::ValidateCorpus { corpus } => {
            let loaded = corpus::load_corpus(&corpus)?;
            println!(
                "corpus ok: {} pairs over {} ids, {} neutral prompts",
                loaded.pairs.len(),
                loaded.ids().len(),
                loaded.neutral_prompts.len()
            );
            Ok(())
        }
        Command::MakeToyModel {
            out,
            seed,
            layers,
            d_model,
            n_heads,
            n_kv_heads,
            d_mlp,
            vocab,
            position_encoding,
            norm,
            mlp,
            max_seq_len,
            precision,
        } => {
            let config = ModelConfig {
                n_layers: layers,
                d_model,
                n_heads,
                n_kv_heads: n_kv_heads.unwrap_or(n_heads),
                d_mlp,
                vocab_size: vocab,
                position_encoding: match position_encoding.as_str() {
                    "rotary" => PositionEncoding::Rotary,
                    "learned" => PositionEncoding::Learned,
                    other => bail!("unknown position encoding `{other}`"),
                },
                norm_kind: match norm.as_str() {
                    "rmsnorm" => NormKind::Rmsnorm,
                    "layernorm" => NormKind::Layernorm,
                    other => bail!("unknown norm `{other}`"),
                },
                mlp_kind: match mlp.as_str() {
                    "gated_silu" => MlpKind::GatedSilu,
                    "gelu" => MlpKind::Gelu,
                    other => bail!("unknown mlp kind `{other}`"),
                },
                max_seq_len,
                norm_eps: 1e-5,
                rope_base: 10_000.0,
            };
            let precision: Precision = precision.parse().map_err(anyhow::Error::msg)?;
            let bundle = make_toy_model(seed, &config)?.into_precision(precision);
            model::save_model(&bundle, &out)?;
            println!("toy model written to {}", out.display());
            Ok(())
        }
        Command::Score { model, corpus, anchors, out, seed, stability } => {
            let stage = prepare(
                &model,
                &corpus,
                &anchors,
                seed,
                &DEFAULT_ALPHAS,
                50,
                &out,
                StageToggles {
                    patch: false,
                    steer: false,
                    figures: false,
                    ..StageToggles::default()
                },
            )?;
            let scores =
                pipeline::run_scores(&stage.bundle, &stage.template, &stage.corpus, &stage.anchors)?;
            write_scores(&stage, &scores)?;
            if stability {
                let by_set =
                    pipeline::run_anchor_stability(&stage.bundle, &stage.template, &stage.corpus)?;
                let rows = report::anchor_stability(&by_set);
                report::write_anchor_stability(
                    &rows,
                    &stage.out.join("anchor_stability.tsv"),
                    &stage.hash,
                )?;
            }
            println!("scored {} pairs -> {}", scores.len(), out.display());
            Ok(())
        }
        Command::PatchSweep { model, corpus, anchors, out, seed } => {
            let stage = prepare(
                &model,
                &corpus,
                &anchors,
                seed,
                &DEFAULT_ALPHAS,
                50,
                &out,
                StageToggles { score: false, flip: false, steer: false, figures: false, ..StageToggles::default() },
            )?;
            let sweeps =
                pipeline::run_sweeps(&stage.bundle, &stage.template, &stage.corpus, &stage.anchors)?;
            write_sweeps(&stage, &sweeps)?;
            let summaries = summaries_of(&sweeps)?;
            output::write_json(
                &stage.out.join("summaries.json"),
                &stage.hash,
                "sweep-summaries.v1",
                &summaries,
            )?;
            for summary in &summaries {
                println!(
                    "{}: n={} median_top_layer={}",
                    summary.condition, summary.n, summary.median_top_layer
                );
            }
            Ok(())
        }
        Command::Heatmap { model, corpus, anchors, pair_id, condition, out, seed } => {
            let condition: Condition = condition.parse().map_err(anyhow::Error::msg)?;
            let stage = prepare(
                &model,
                &corpus,
                &anchors,
                seed,
                &DEFAULT_ALPHAS,
                50,
                &out,
                StageToggles { score: false, flip: false, steer: false, stats: false, ..StageToggles::default() },
            )?;
            let heatmap = pipeline::run_heatmap(
                &stage.bundle,
                &stage.template,
                &stage.corpus,
                &stage.anchors,
                pair_id,
                condition,
            )?;
            output::write_json(
                &stage.out.join(format!("heatmap_{pair_id}_{condition}.json")),
                &stage.hash,
                "heatmap.v1",
                &heatmap,
            )?;
            svg::emit_heatmap_svg(
                &heatmap,
                &stage.hash,
                &stage.out.join(format!("heatmap_{pair_id}_{condition}.svg")),
            )?;
            println!("heatmap for pair {pair_id} ({condition}) -> {}", out.display());
            Ok(())
        }
        Command::FlipTest { model, corpus, anchors, out, seed } => {
            let stage = prepare(
                &model,
                &corpus,
                &anchors,
                seed,
                &DEFAULT_ALPHAS,
                50,
                &out,
                StageToggles { patch: false, steer: false, figures: false, ..StageToggles::default() },
            )?;
            let scores =
                pipeline::run_scores(&stage.bundle, &stage.template, &stage.corpus, &stage.anchors)?;
            write_scores(&stage, &scores)?;
            let flips = pipeline::flip_records_from_scores(&scores);
            write_flips(&stage, &flips)?;
            let rate = vallens::flip::flip_rate(&flips)?;
            println!("flip rate: {:.3} over {} ids", rate, flips.len());
            Ok(())
        }
        Command::ExtractDirection {
            model,
            corpus,
            anchors,
            condition,
            layer,
            n_pairs,
            seed,
            out,
        } => {
            let condition: Condition = condition.parse().map_err(anyhow::Error::msg)?;
            let stage = prepare(
                &model,
                &corpus,
                &anchors,
                seed,
                &DEFAULT_ALPHAS,
                n_pairs,
                &out,
                StageToggles { score: false, flip: false, figures: false, stats: false, ..StageToggles::default() },
            )?;
            let layer = match layer {
                Some(l) => l,
                None => {
                    let sweeps = pipeline::run_sweeps(
                        &stage.bundle,
                        &stage.template,
                        &stage.corpus,
                        &stage.anchors,
                    )?;
                    let group: Vec<PatchSweepResult> =
                        sweeps.into_iter().filter(|s| s.condition == condition).collect();
                    patch::summarize_sweeps(&group)?.median_top_layer
                }
            };
            let pairs = stage.corpus.pairs_for(condition);
            let n_eff = n_pairs.min(pairs.len());
            let direction = vallens::steering::extract_direction(
                &stage.bundle,
                &stage.template,
                &pairs,
                layer,
                n_eff,
                pipeline::direction_seed(seed, condition),
            )?;
            let path = stage.out.join(format!("direction_{condition}.json"));
            #[derive(serde::Serialize)]
            struct DirectionFile<'a> {
                manifest_hash: &'a str,
                #[serde(flatten)]
                direction: &'a SteeringDirection,
            }
            std::fs::write(
                &path,
                serde_json::to_string_pretty(&DirectionFile {
                    manifest_hash: &stage.hash,
                    direction: &direction,
                })?,
            )?;
            println!(
                "direction for {condition} at layer {layer} (raw norm {:.4}) -> {}",
                direction.raw_norm,
                path.display()
            );
            Ok(())
        }
        Command::Steer { model, corpus, anchors, direction, alphas, out, seed } => {
            let alphas = parse_alphas(alphas.as_deref())?;
            let stage = prepare(
                &model,
                &corpus,
                &anchors,
                seed,
                &alphas,
                50,
                &out,
                StageToggles { score: false, flip: false, patch: false, figures: false, ..StageToggles::default() },
            )?;
            let direction = SteeringDirection::load(&direction)?;
            let (outcomes, summary) = vallens::steering::alpha_sweep(
                &stage.bundle,
                &stage.template,
                &stage.corpus.neutral_prompts,
                &direction,
                &alphas,
                &stage.anchors,
            )?;
            let runs = vec![SteeringRun { direction, outcomes, summary }];
            write_steering(&stage, &runs)?;
            for stat in &runs[0].summary.per_alpha {
                println!(
                    "alpha {:+.1}: mean delta {:+.4}, shifted+ {:.2}, shifted- {:.2}",
                    stat.alpha, stat.mean_delta, stat.pct_shifted_positive, stat.pct_shifted_negative
                );
            }
            Ok(())
        }
        Command::Stats { run, grouping } => {
            let grouping: Grouping = grouping.parse().map_err(anyhow::Error::msg)?;
            cmd_stats(&run, grouping)
        }
        Command::Report {
            model,
            corpus,
            anchors,
            out,
            seed,
            alphas,
            n_direction_pairs,
            grouping,
            stability,
            skip_patch,
            skip_steer,
            skip_figures,
            skip_stats,
        } => {
            let grouping: Grouping = grouping.parse().map_err(anyhow::Error::msg)?;
            let alphas = parse_alphas(alphas.as_deref())?;
            let stages = StageToggles {
                score: true,
                patch: !skip_patch,
                flip: true,
                steer: !skip_steer && !skip_patch,
                stats: !skip_stats,
                figures: !skip_figures && !skip_patch,
            };
            let stage = prepare(
                &model,
                &corpus,
                &anchors,
                seed,
                &alphas,
                n_direction_pairs,
                &out,
                stages,
            )?;
            cmd_report(&stage, grouping, stability)?;
            println!("report complete -> {}", out.display());
            Ok(())
        }
    }
}

fn main() {
    if let Ok(threads) = std::env::var("VALLENS_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = Cli::parse();
    if let Err(err) = dispatch(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
