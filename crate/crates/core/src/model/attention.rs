//! Causal self-attention kernels.
//!
//! Two code paths share the same inner arithmetic: [`mha_attention`] with one
//! key/value head per query head, and [`grouped_attention`] where groups of
//! query heads read a shared key/value head. Padding positions are excluded
//! from attention entirely; a query with no visible keys outputs zeros.

use ndarray::Array2;
use rayon::prelude::*;

/// Softmax-weighted value sum for one (query, head) pair over keys
/// `0..=q_pos` restricted to unmasked positions. Scores and the mixture are
/// accumulated in f64.
#[inline]
#[allow(clippy::too_many_arguments)]
fn attend_one(
    q_row: &[f32],
    k: &Array2<f32>,
    v: &Array2<f32>,
    mask: &[bool],
    q_pos: usize,
    q_off: usize,
    kv_off: usize,
    head_dim: usize,
    scale: f64,
    out: &mut [f32],
) {
    let mut scores: Vec<(usize, f64)> = Vec::with_capacity(q_pos + 1);
    for j in 0..=q_pos {
        if !mask[j] {
            continue;
        }
        let k_row = k.row(j);
        let k_slice = &k_row.as_slice().expect("k rows contiguous")[kv_off..kv_off + head_dim];
        let mut acc = 0.0f64;
        for (qv, kv) in q_row[q_off..q_off + head_dim].iter().zip(k_slice) {
            acc += *qv as f64 * *kv as f64;
        }
        scores.push((j, acc * scale));
    }
    if scores.is_empty() {
        out[q_off..q_off + head_dim].fill(0.0);
        return;
    }
    let max = scores.iter().map(|&(_, s)| s).fold(f64::NEG_INFINITY, f64::max);
    let mut denom = 0.0f64;
    for (_, s) in scores.iter_mut() {
        *s = (*s - max).exp();
        denom += *s;
    }
    for d in 0..head_dim {
        let mut acc = 0.0f64;
        for &(j, w) in &scores {
            acc += w * v[(j, kv_off + d)] as f64;
        }
        out[q_off + d] = (acc / denom) as f32;
    }
}

/// Multi-head attention: query head `h` reads key/value head `h`.
pub fn mha_attention(
    q: &Array2<f32>,
    k: &Array2<f32>,
    v: &Array2<f32>,
    mask: &[bool],
    n_heads: usize,
    head_dim: usize,
) -> Array2<f32> {
    let seq = q.nrows();
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut out = Array2::<f32>::zeros((seq, n_heads * head_dim));
    out.axis_iter_mut(ndarray::Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut out_row)| {
            let q_row = q.row(i);
            let q_slice = q_row.as_slice().expect("q rows contiguous");
            let out_slice = out_row.as_slice_mut().expect("out rows contiguous");
            for h in 0..n_heads {
                let off = h * head_dim;
                attend_one(q_slice, k, v, mask, i, off, off, head_dim, scale, out_slice);
            }
        });
    out
}

/// Grouped-query attention: query head `h` reads key/value head
/// `h / (n_heads / n_kv_heads)`.
pub fn grouped_attention(
    q: &Array2<f32>,
    k: &Array2<f32>,
    v: &Array2<f32>,
    mask: &[bool],
    n_heads: usize,
    n_kv_heads: usize,
    head_dim: usize,
) -> Array2<f32> {
    let seq = q.nrows();
    let group = n_heads / n_kv_heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut out = Array2::<f32>::zeros((seq, n_heads * head_dim));
    out.axis_iter_mut(ndarray::Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut out_row)| {
            let q_row = q.row(i);
            let q_slice = q_row.as_slice().expect("q rows contiguous");
            let out_slice = out_row.as_slice_mut().expect("out rows contiguous");
            for h in 0..n_heads {
                let q_off = h * head_dim;
                let kv_off = (h / group) * head_dim;
                attend_one(q_slice, k, v, mask, i, q_off, kv_off, head_dim, scale, out_slice);
            }
        });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn single_visible_key_copies_value() {
        let q = array![[1.0f32, 0.0]];
        let k = array![[0.5f32, 0.5]];
        let v = array![[3.0f32, -2.0]];
        let out = mha_attention(&q, &k, &v, &[true], 1, 2);
        assert_eq!(out, array![[3.0, -2.0]]);
    }

    #[test]
    fn masked_keys_are_invisible() {
        let q = array![[1.0f32], [1.0]];
        let k = array![[10.0f32], [0.0]];
        let v = array![[7.0f32], [1.0]];
        // Position 0 is a pad: the query at position 1 must ignore it.
        let out = mha_attention(&q, &k, &v, &[false, true], 1, 1);
        assert_eq!(out[(1, 0)], 1.0);
        // The pad query itself sees nothing and outputs zero.
        assert_eq!(out[(0, 0)], 0.0);
    }

    #[test]
    fn causal_mask_hides_future_keys() {
        let q = array![[1.0f32], [1.0]];
        let k = array![[0.0f32], [100.0]];
        let v = array![[5.0f32], [9.0]];
        let out = mha_attention(&q, &k, &v, &[true, true], 1, 1);
        // Query 0 can only see key 0.
        assert_eq!(out[(0, 0)], 5.0);
        // Query 1 is dominated by key 1's huge score.
        assert!((out[(1, 0)] - 9.0).abs() < 1e-4);
    }

    #[test]
    fn degenerate_grouping_matches_mha_bitwise() {
        let q = array![[0.3f32, -0.1, 0.9, 0.4], [0.2, 0.8, -0.5, 0.1]];
        let k = array![[0.1f32, 0.7, -0.3, 0.2], [0.6, -0.2, 0.4, 0.9]];
        let v = array![[1.0f32, 2.0, 3.0, 4.0], [-1.0, -2.0, -3.0, -4.0]];
        let mask = [true, true];
        let a = mha_attention(&q, &k, &v, &mask, 2, 2);
        let b = grouped_attention(&q, &k, &v, &mask, 2, 2, 2);
        assert_eq!(a, b);
    }
}
