//! Independent oracles used to cross-check the library.
//!
//! `spliced_forward` is a straight-line reimplementation of the forward pass
//! with no hook machinery: edits are spliced into the residual stream by
//! direct substitution. It follows the same numeric policy as the library
//! (f32 storage, f64 accumulation per reduction) but shares no code with it.

use vallens::model::{
    MlpKind, MlpWeights, ModelBundle, NormKind, Param2, PositionEncoding,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleEdit {
    Replace,
    Add,
}

/// (layer, position, vector, mode)
pub type SplicedEdit = (usize, usize, Vec<f32>, OracleEdit);

pub struct OracleRun {
    pub logits: Vec<f32>,
    /// resid_pre\[layer\]\[position\] as seen entering each layer, recorded
    /// after same-layer splices.
    pub resid_pre: Vec<Vec<Vec<f32>>>,
}

fn rows_of(param: &Param2) -> Vec<Vec<f32>> {
    let arr = param.to_f32_array();
    (0..arr.nrows()).map(|r| arr.row(r).to_vec()).collect()
}

fn dot64(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for i in 0..a.len() {
        acc += a[i] as f64 * b[i] as f64;
    }
    acc
}

fn project(rows: &[Vec<f32>], x: &[f32], bias: Option<&[f32]>) -> Vec<f32> {
    let mut out = Vec::with_capacity(rows.len());
    for (o, row) in rows.iter().enumerate() {
        let mut acc = dot64(row, x);
        if let Some(b) = bias {
            acc += b[o] as f64;
        }
        out.push(acc as f32);
    }
    out
}

fn norm_row(x: &[f32], weight: &[f32], bias: Option<&[f32]>, kind: NormKind, eps: f64) -> Vec<f32> {
    match kind {
        NormKind::Rmsnorm => {
            let mut sum_sq = 0.0f64;
            for &v in x {
                sum_sq += v as f64 * v as f64;
            }
            let inv = 1.0 / (sum_sq / x.len() as f64 + eps).sqrt();
            x.iter().zip(weight).map(|(&v, &w)| (v as f64 * inv * w as f64) as f32).collect()
        }
        NormKind::Layernorm => {
            let n = x.len() as f64;
            let mut mean = 0.0f64;
            for &v in x {
                mean += v as f64;
            }
            mean /= n;
            let mut var = 0.0f64;
            for &v in x {
                let d = v as f64 - mean;
                var += d * d;
            }
            var /= n;
            let inv = 1.0 / (var + eps).sqrt();
            let bias = bias.expect("layernorm bias");
            x.iter()
                .zip(weight)
                .zip(bias)
                .map(|((&v, &w), &b)| ((v as f64 - mean) * inv * w as f64 + b as f64) as f32)
                .collect()
        }
    }
}

fn rotate(row: &mut [f32], n_heads: usize, head_dim: usize, pos: usize, base: f64) {
    let half = head_dim / 2;
    for h in 0..n_heads {
        let off = h * head_dim;
        for i in 0..half {
            let inv_freq = base.powf(-2.0 * i as f64 / head_dim as f64);
            let angle = pos as f64 * inv_freq;
            let (sin, cos) = angle.sin_cos();
            let a = row[off + i] as f64;
            let b = row[off + half + i] as f64;
            row[off + i] = (a * cos - b * sin) as f32;
            row[off + half + i] = (b * cos + a * sin) as f32;
        }
    }
}

/// Straight-line forward pass with residual substitutions.
pub fn spliced_forward(
    bundle: &ModelBundle,
    tokens: &[u32],
    mask: &[bool],
    edits: &[SplicedEdit],
) -> OracleRun {
    let cfg = bundle.config();
    let weights = bundle.weights();
    let seq = tokens.len();
    let d = cfg.d_model;
    let head_dim = cfg.head_dim();
    let group = cfg.n_heads / cfg.n_kv_heads;
    let eps = cfg.norm_eps as f64;

    let mut positions = Vec::with_capacity(seq);
    let mut seen = 0usize;
    for &m in mask {
        positions.push(if m { seen } else { 0 });
        if m {
            seen += 1;
        }
    }

    let embedding = rows_of(&weights.embedding);
    let pos_table = weights.pos_embedding.as_ref().map(rows_of);

    let mut x: Vec<Vec<f32>> = Vec::with_capacity(seq);
    for (s, &tok) in tokens.iter().enumerate() {
        let mut row = embedding[tok as usize].clone();
        if cfg.position_encoding == PositionEncoding::Learned {
            let table = pos_table.as_ref().expect("learned table");
            for (r, p) in row.iter_mut().zip(&table[positions[s]]) {
                *r += *p;
            }
        }
        x.push(row);
    }

    let mut resid_pre: Vec<Vec<Vec<f32>>> = Vec::with_capacity(cfg.n_layers);
    for (layer_idx, layer) in weights.layers.iter().enumerate() {
        for (edit_layer, position, vector, mode) in edits {
            if *edit_layer == layer_idx {
                match mode {
                    OracleEdit::Replace => x[*position].copy_from_slice(vector),
                    OracleEdit::Add => {
                        for (r, v) in x[*position].iter_mut().zip(vector) {
                            *r += *v;
                        }
                    }
                }
            }
        }
        resid_pre.push(x.clone());

        let wq = rows_of(&layer.wq);
        let wk = rows_of(&layer.wk);
        let wv = rows_of(&layer.wv);
        let wo = rows_of(&layer.wo);
        let bq = layer.bq.as_ref().map(|b| b.to_vec());
        let bk = layer.bk.as_ref().map(|b| b.to_vec());
        let bv = layer.bv.as_ref().map(|b| b.to_vec());
        let attn_norm_w = layer.attn_norm.weight.to_vec();
        let attn_norm_b = layer.attn_norm.bias.as_ref().map(|b| b.to_vec());
        let mlp_norm_w = layer.mlp_norm.weight.to_vec();
        let mlp_norm_b = layer.mlp_norm.bias.as_ref().map(|b| b.to_vec());

        // Attention sub-block.
        let mut q_rows = Vec::with_capacity(seq);
        let mut k_rows = Vec::with_capacity(seq);
        let mut v_rows = Vec::with_capacity(seq);
        for s in 0..seq {
            let normed =
                norm_row(&x[s], &attn_norm_w, attn_norm_b.as_deref(), cfg.norm_kind, eps);
            let mut q = project(&wq, &normed, bq.as_deref());
            let mut k = project(&wk, &normed, bk.as_deref());
            let v = project(&wv, &normed, bv.as_deref());
            if cfg.position_encoding == PositionEncoding::Rotary {
                rotate(&mut q, cfg.n_heads, head_dim, positions[s], cfg.rope_base);
                rotate(&mut k, cfg.n_kv_heads, head_dim, positions[s], cfg.rope_base);
            }
            q_rows.push(q);
            k_rows.push(k);
            v_rows.push(v);
        }

        let scale = 1.0 / (head_dim as f64).sqrt();
        for s in 0..seq {
            let mut attn = vec![0.0f32; d];
            for h in 0..cfg.n_heads {
                let q_off = h * head_dim;
                let kv_off = (h / group) * head_dim;
                let mut kept: Vec<(usize, f64)> = Vec::new();
                for j in 0..=s {
                    if !mask[j] {
                        continue;
                    }
                    let mut acc = 0.0f64;
                    for t in 0..head_dim {
                        acc += q_rows[s][q_off + t] as f64 * k_rows[j][kv_off + t] as f64;
                    }
                    kept.push((j, acc * scale));
                }
                if kept.is_empty() {
                    continue;
                }
                let max = kept.iter().map(|&(_, v)| v).fold(f64::NEG_INFINITY, f64::max);
                let mut denom = 0.0f64;
                for entry in kept.iter_mut() {
                    entry.1 = (entry.1 - max).exp();
                    denom += entry.1;
                }
                for t in 0..head_dim {
                    let mut acc = 0.0f64;
                    for &(j, w) in &kept {
                        acc += w * v_rows[j][kv_off + t] as f64;
                    }
                    attn[q_off + t] = (acc / denom) as f32;
                }
            }
            let o = project(&wo, &attn, None);
            for (r, v) in x[s].iter_mut().zip(&o) {
                *r += *v;
            }
        }

        // MLP sub-block.
        match (&layer.mlp, cfg.mlp_kind) {
            (MlpWeights::GatedSilu { gate, up, down }, MlpKind::GatedSilu) => {
                let gate = rows_of(gate);
                let up = rows_of(up);
                let down = rows_of(down);
                for s in 0..seq {
                    let normed =
                        norm_row(&x[s], &mlp_norm_w, mlp_norm_b.as_deref(), cfg.norm_kind, eps);
                    let g = project(&gate, &normed, None);
                    let u = project(&up, &normed, None);
                    let mut a = Vec::with_capacity(g.len());
                    for i in 0..g.len() {
                        let gv = g[i] as f64;
                        let silu = gv / (1.0 + (-gv).exp());
                        a.push((silu * u[i] as f64) as f32);
                    }
                    let out = project(&down, &a, None);
                    for (r, v) in x[s].iter_mut().zip(&out) {
                        *r += *v;
                    }
                }
            }
            (MlpWeights::Gelu { fc_in, fc_in_bias, fc_out, fc_out_bias }, MlpKind::Gelu) => {
                let fc_in = rows_of(fc_in);
                let fc_out = rows_of(fc_out);
                let b_in = fc_in_bias.as_ref().map(|b| b.to_vec());
                let b_out = fc_out_bias.as_ref().map(|b| b.to_vec());
                const C: f64 = 0.797_884_560_802_865_4;
                for s in 0..seq {
                    let normed =
                        norm_row(&x[s], &mlp_norm_w, mlp_norm_b.as_deref(), cfg.norm_kind, eps);
                    let mut h = project(&fc_in, &normed, b_in.as_deref());
                    for v in h.iter_mut() {
                        let xv = *v as f64;
                        *v = (0.5 * xv * (1.0 + (C * (xv + 0.044_715 * xv * xv * xv)).tanh())) as f32;
                    }
                    let out = project(&fc_out, &h, b_out.as_deref());
                    for (r, v) in x[s].iter_mut().zip(&out) {
                        *r += *v;
                    }
                }
            }
            _ => unreachable!("mlp weights match the config"),
        }
    }

    let final_w = weights.final_norm.weight.to_vec();
    let final_b = weights.final_norm.bias.as_ref().map(|b| b.to_vec());
    let last = norm_row(&x[seq - 1], &final_w, final_b.as_deref(), cfg.norm_kind, eps);
    let unembed = rows_of(&weights.unembedding);
    let logits = project(&unembed, &last, None);

    OracleRun { logits, resid_pre }
}

/// Naive softmax scorer: materialize the probability vector by direct
/// exponentiation in f64, then take mean log-prob differences.
pub fn naive_score(logits: &[f32], positive: &[u32], negative: &[u32]) -> f64 {
    let exps: Vec<f64> = logits.iter().map(|&v| (v as f64).exp()).collect();
    let z: f64 = exps.iter().sum();
    let mean_lp = |ids: &[u32]| -> f64 {
        ids.iter().map(|&id| (exps[id as usize] / z).ln()).sum::<f64>() / ids.len() as f64
    };
    mean_lp(positive) - mean_lp(negative)
}

/// Exhaustive permutation p-value for the one-sided Mann-Whitney test
/// (alternative: first sample greater), enumerating subsets by bitmask.
pub fn exact_mwu_p(a: &[f64], b: &[f64]) -> f64 {
    let n1 = a.len();
    let n = n1 + b.len();
    assert!(n <= 20, "oracle enumeration limited to small samples");

    let mut combined: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
    // Average ranks by counting comparisons, no sorting.
    let ranks: Vec<f64> = (0..n)
        .map(|i| {
            let below = combined.iter().filter(|&&v| v < combined[i]).count();
            let equal = combined.iter().filter(|&&v| v == combined[i]).count();
            below as f64 + (equal as f64 + 1.0) / 2.0
        })
        .collect();
    combined.clear();

    let offset = (n1 * (n1 + 1)) as f64 / 2.0;
    let observed: f64 = ranks[..n1].iter().sum::<f64>() - offset;

    let mut hits = 0u64;
    let mut total = 0u64;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != n1 {
            continue;
        }
        let mut rank_sum = 0.0f64;
        for (i, rank) in ranks.iter().enumerate() {
            if mask & (1 << i) != 0 {
                rank_sum += rank;
            }
        }
        total += 1;
        if rank_sum - offset >= observed - 1e-9 {
            hits += 1;
        }
    }
    hits as f64 / total as f64
}

/// Rank-then-correlate Spearman oracle with counting-based average ranks.
pub fn naive_spearman_rho(xs: &[f64], ys: &[f64]) -> f64 {
    let rank = |values: &[f64]| -> Vec<f64> {
        (0..values.len())
            .map(|i| {
                let below = values.iter().filter(|&&v| v < values[i]).count();
                let equal = values.iter().filter(|&&v| v == values[i]).count();
                below as f64 + (equal as f64 + 1.0) / 2.0
            })
            .collect()
    };
    let rx = rank(xs);
    let ry = rank(ys);
    let n = xs.len() as f64;
    let mean_x = rx.iter().sum::<f64>() / n;
    let mean_y = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for i in 0..xs.len() {
        let dx = rx[i] - mean_x;
        let dy = ry[i] - mean_y;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    cov / (var_x.sqrt() * var_y.sqrt())
}
