//! Deterministic, dependency-free SVG figures: patch-effect heatmaps and
//! top-layer scatter plots. Identical inputs produce byte-identical files.

use std::fmt::Write as _;
use std::path::Path;

use crate::patch::{ConditionSummary, HeatmapResult};
use crate::Condition;

const VIRIDIS: [(f64, [f64; 3]); 9] = [
    (0.000, [68.0, 1.0, 84.0]),
    (0.125, [71.0, 44.0, 122.0]),
    (0.250, [59.0, 81.0, 139.0]),
    (0.375, [44.0, 113.0, 142.0]),
    (0.500, [33.0, 144.0, 141.0]),
    (0.625, [39.0, 173.0, 129.0]),
    (0.750, [92.0, 200.0, 99.0]),
    (0.875, [170.0, 220.0, 50.0]),
    (1.000, [253.0, 231.0, 37.0]),
];

const PAD_FILL: &str = "#d6d6d6";

pub fn condition_color(condition: Condition) -> &'static str {
    match condition {
        Condition::GoodNews => "#3b6fb6",
        Condition::NegativeControl => "#c23b3b",
    }
}

/// Sequential colormap sample at `t` in [0, 1].
pub fn viridis_color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let mut lo = VIRIDIS[0];
    let mut hi = VIRIDIS[VIRIDIS.len() - 1];
    for w in VIRIDIS.windows(2) {
        if t >= w[0].0 && t <= w[1].0 {
            lo = w[0];
            hi = w[1];
            break;
        }
    }
    let span = hi.0 - lo.0;
    let f = if span > 0.0 { (t - lo.0) / span } else { 0.0 };
    let channel = |i: usize| (lo.1[i] + (hi.1[i] - lo.1[i]) * f).round() as u8;
    format!("#{:02x}{:02x}{:02x}", channel(0), channel(1), channel(2))
}

/// Fill color for one heatmap cell given the value range of the whole map.
/// A degenerate range maps everything to the midpoint color.
pub fn heatmap_cell_color(value: f64, min: f64, max: f64) -> String {
    let t = if max > min { (value - min) / (max - min) } else { 0.5 };
    viridis_color(t)
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            '\n' => out.push_str("\\n"),
            other => out.push(other),
        }
    }
    out
}

/// Render a layer-by-position heatmap. Layers run bottom-up on the y-axis,
/// token positions left-to-right on the x-axis; pad cells render in gray.
pub fn render_heatmap_svg(heatmap: &HeatmapResult, manifest_hash: &str) -> String {
    let n_layers = heatmap.effects.len();
    let seq = heatmap.effects.first().map_or(0, Vec::len);
    let cell_w = 22.0;
    let cell_h = 18.0;
    let left = 46.0;
    let top = 46.0;
    let bottom = 80.0;
    let width = left + seq as f64 * cell_w + 16.0;
    let height = top + n_layers as f64 * cell_h + bottom;

    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for (l, row) in heatmap.effects.iter().enumerate() {
        let _ = l;
        for (p, &v) in row.iter().enumerate() {
            if !heatmap.pad_mask[p] {
                min = min.min(v);
                max = max.max(v);
            }
        }
    }
    if !min.is_finite() {
        min = 0.0;
        max = 0.0;
    }

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}">"#
    );
    let _ = writeln!(svg, "<!-- manifest_hash={manifest_hash} -->");
    let _ = writeln!(
        svg,
        r#"<text x="{left:.0}" y="16" font-family="monospace" font-size="12">pair {} ({}) patch effects</text>"#,
        heatmap.pair_id,
        heatmap.condition.as_str()
    );
    let _ = writeln!(
        svg,
        r#"<text x="{left:.0}" y="32" font-family="monospace" font-size="10">value range [{min:.4}, {max:.4}]</text>"#
    );

    for layer in 0..n_layers {
        // Layer 0 sits at the bottom row.
        let y = top + (n_layers - 1 - layer) as f64 * cell_h;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-family="monospace" font-size="9" text-anchor="end">{layer}</text>"#,
            left - 4.0,
            y + cell_h - 5.0
        );
        for pos in 0..seq {
            let x = left + pos as f64 * cell_w;
            let value = heatmap.effects[layer][pos];
            let fill = if heatmap.pad_mask[pos] {
                PAD_FILL.to_string()
            } else {
                heatmap_cell_color(value, min, max)
            };
            let _ = writeln!(
                svg,
                r#"<rect x="{x:.1}" y="{y:.1}" width="{cell_w:.1}" height="{cell_h:.1}" fill="{fill}" data-layer="{layer}" data-position="{pos}" data-value="{value}" data-pad="{}"/>"#,
                u8::from(heatmap.pad_mask[pos])
            );
        }
    }

    for (pos, label) in heatmap.token_labels.iter().enumerate() {
        let x = left + pos as f64 * cell_w + cell_w / 2.0;
        let y = top + n_layers as f64 * cell_h + 12.0;
        let _ = writeln!(
            svg,
            r#"<text x="{x:.1}" y="{y:.1}" font-family="monospace" font-size="8" text-anchor="start" transform="rotate(60 {x:.1} {y:.1})">{}</text>"#,
            xml_escape(label)
        );
    }

    svg.push_str("</svg>\n");
    svg
}

/// Deterministic pseudo-jitter in [-0.5, 0.5) derived from the pair id.
pub fn jitter_unit(pair_id: u32) -> f64 {
    let h = pair_id.wrapping_mul(2_654_435_761);
    ((h >> 8) % 10_001) as f64 / 10_000.0 - 0.5
}

/// Render a per-prompt top-layer scatter, one jittered column per condition.
pub fn render_layer_scatter_svg(summaries: &[ConditionSummary], manifest_hash: &str) -> String {
    let col_w = 170.0;
    let left = 52.0;
    let top = 40.0;
    let plot_h = 260.0;
    let bottom = 46.0;
    let width = left + summaries.len() as f64 * col_w + 24.0;
    let height = top + plot_h + bottom;

    let max_layer = summaries
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.top_layer))
        .max()
        .unwrap_or(0);
    let y_span = (max_layer + 1) as f64;
    let y_of = |layer: usize| top + plot_h - (layer as f64 + 0.5) / y_span * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}">"#
    );
    let _ = writeln!(svg, "<!-- manifest_hash={manifest_hash} -->");
    let _ = writeln!(
        svg,
        r#"<text x="{left:.0}" y="18" font-family="monospace" font-size="12">top causal patch layer per prompt</text>"#
    );

    // y-axis ticks.
    for layer in 0..=max_layer {
        let y = y_of(layer);
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-family="monospace" font-size="9" text-anchor="end">{layer}</text>"#,
            left - 6.0,
            y + 3.0
        );
    }

    for (i, summary) in summaries.iter().enumerate() {
        let center = left + i as f64 * col_w + col_w / 2.0;
        let color = condition_color(summary.condition);
        let _ = writeln!(
            svg,
            r#"<text x="{center:.1}" y="{:.1}" font-family="monospace" font-size="10" text-anchor="middle" fill="{color}">{}</text>"#,
            top + plot_h + 20.0,
            summary.condition.as_str()
        );
        for point in &summary.points {
            let x = center + jitter_unit(point.pair_id) * col_w * 0.7;
            let y = y_of(point.top_layer);
            let _ = writeln!(
                svg,
                r#"<circle cx="{x:.2}" cy="{y:.2}" r="4" fill="{color}" fill-opacity="0.75" data-pair-id="{}" data-layer="{}" data-condition="{}"/>"#,
                point.pair_id,
                point.top_layer,
                summary.condition.as_str()
            );
        }
    }

    svg.push_str("</svg>\n");
    svg
}

pub fn emit_heatmap_svg(
    heatmap: &HeatmapResult,
    manifest_hash: &str,
    out: &Path,
) -> std::io::Result<()> {
    std::fs::write(out, render_heatmap_svg(heatmap, manifest_hash))
}

pub fn emit_layer_scatter(
    summaries: &[ConditionSummary],
    manifest_hash: &str,
    out: &Path,
) -> std::io::Result<()> {
    std::fs::write(out, render_layer_scatter_svg(summaries, manifest_hash))
}
