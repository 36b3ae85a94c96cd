//! Numeric kernels for the forward pass.
//!
//! Every reduction (matmul cell, norm statistics, softmax sums) accumulates
//! in f64 and rounds to f32 once at a fixed point, so results do not depend
//! on thread count or blocking order. Parallelism is across output rows;
//! each cell is produced by exactly one sequential reduction.

use half::{bf16, f16};
use ndarray::{Array1, Array2, ArrayView2};
use rayon::prelude::*;

use super::config::NormKind;
use super::weights::{NormWeights, Param2};

pub trait Scalar: Copy + Send + Sync {
    fn to_f32(self) -> f32;
}

impl Scalar for f32 {
    #[inline]
    fn to_f32(self) -> f32 {
        self
    }
}

impl Scalar for f16 {
    #[inline]
    fn to_f32(self) -> f32 {
        f16::to_f32(self)
    }
}

impl Scalar for bf16 {
    #[inline]
    fn to_f32(self) -> f32 {
        bf16::to_f32(self)
    }
}

#[inline]
fn dot_f64<T: Scalar>(w_row: &[T], x_row: &[f32]) -> f64 {
    debug_assert_eq!(w_row.len(), x_row.len());
    let mut acc = 0.0f64;
    for (w, x) in w_row.iter().zip(x_row) {
        acc += w.to_f32() as f64 * *x as f64;
    }
    acc
}

fn matmul_t_impl<T: Scalar>(
    x: ArrayView2<'_, f32>,
    w: ArrayView2<'_, T>,
    bias: Option<&Array1<f32>>,
) -> Array2<f32> {
    let (seq, d_in) = x.dim();
    let (d_out, w_in) = w.dim();
    assert_eq!(d_in, w_in, "matmul dimension mismatch");
    let mut out = Array2::<f32>::zeros((seq, d_out));
    out.axis_iter_mut(ndarray::Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(s, mut out_row)| {
            let x_row = x.row(s);
            let x_slice = x_row.as_slice().expect("x rows are contiguous");
            for o in 0..d_out {
                let w_row = w.row(o);
                let w_slice = w_row.as_slice().expect("w rows are contiguous");
                let mut acc = dot_f64(w_slice, x_slice);
                if let Some(b) = bias {
                    acc += b[o] as f64;
                }
                out_row[o] = acc as f32;
            }
        });
    out
}

/// `y = x · Wᵀ + b` where `W` is stored `[d_out, d_in]`.
pub fn linear(x: &Array2<f32>, w: &Param2, bias: Option<&Array1<f32>>) -> Array2<f32> {
    match w {
        Param2::F32(a) => matmul_t_impl(x.view(), a.view(), bias),
        Param2::F16(a) => matmul_t_impl(x.view(), a.view(), bias),
        Param2::Bf16(a) => matmul_t_impl(x.view(), a.view(), bias),
    }
}

fn matvec_impl<T: Scalar>(w: ArrayView2<'_, T>, v: &[f32]) -> Vec<f32> {
    let (rows, cols) = w.dim();
    assert_eq!(cols, v.len(), "matvec dimension mismatch");
    (0..rows)
        .into_par_iter()
        .map(|r| {
            let w_row = w.row(r);
            dot_f64(w_row.as_slice().expect("w rows are contiguous"), v) as f32
        })
        .collect()
}

/// `y = W · v` where `W` is stored `[rows, cols]` and `v` has length `cols`.
pub fn matvec(w: &Param2, v: &[f32]) -> Vec<f32> {
    match w {
        Param2::F32(a) => matvec_impl(a.view(), v),
        Param2::F16(a) => matvec_impl(a.view(), v),
        Param2::Bf16(a) => matvec_impl(a.view(), v),
    }
}

fn rmsnorm_row(x: &[f32], weight: &[f32], eps: f64, out: &mut [f32]) {
    let mut sum_sq = 0.0f64;
    for &v in x {
        sum_sq += v as f64 * v as f64;
    }
    let inv = 1.0 / (sum_sq / x.len() as f64 + eps).sqrt();
    for i in 0..x.len() {
        out[i] = (x[i] as f64 * inv * weight[i] as f64) as f32;
    }
}

fn layernorm_row(x: &[f32], weight: &[f32], bias: &[f32], eps: f64, out: &mut [f32]) {
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
    for i in 0..x.len() {
        out[i] = ((x[i] as f64 - mean) * inv * weight[i] as f64 + bias[i] as f64) as f32;
    }
}

pub fn apply_norm(x: &Array2<f32>, norm: &NormWeights, kind: NormKind, eps: f32) -> Array2<f32> {
    let mut out = Array2::<f32>::zeros(x.dim());
    let weight = norm.weight.as_slice().expect("norm weight contiguous");
    let eps = eps as f64;
    out.axis_iter_mut(ndarray::Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(s, mut out_row)| {
            let row = x.row(s);
            let row = row.as_slice().expect("x rows contiguous");
            let out_slice = out_row.as_slice_mut().expect("out rows contiguous");
            match kind {
                NormKind::Rmsnorm => rmsnorm_row(row, weight, eps, out_slice),
                NormKind::Layernorm => {
                    let bias = norm.bias.as_ref().expect("layernorm bias checked at load");
                    layernorm_row(row, weight, bias.as_slice().unwrap(), eps, out_slice)
                }
            }
        });
    out
}

#[inline]
pub fn silu_f64(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

/// Tanh-approximation GELU, the convention used by GPT-style checkpoints.
#[inline]
pub fn gelu_f64(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

/// Rotate query/key rows in place with the half-rotation convention:
/// the first half of each head pairs with the second half. `positions`
/// holds the per-row rotary position index.
pub fn apply_rotary(
    x: &mut Array2<f32>,
    n_heads: usize,
    head_dim: usize,
    positions: &[usize],
    base: f64,
) {
    assert_eq!(x.ncols(), n_heads * head_dim);
    let half = head_dim / 2;
    let inv_freq: Vec<f64> = (0..half)
        .map(|i| base.powf(-2.0 * i as f64 / head_dim as f64))
        .collect();
    x.axis_iter_mut(ndarray::Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(s, mut row)| {
            let pos = positions[s] as f64;
            for h in 0..n_heads {
                let off = h * head_dim;
                for i in 0..half {
                    let angle = pos * inv_freq[i];
                    let (sin, cos) = angle.sin_cos();
                    let a = row[off + i] as f64;
                    let b = row[off + half + i] as f64;
                    row[off + i] = (a * cos - b * sin) as f32;
                    row[off + half + i] = (b * cos + a * sin) as f32;
                }
            }
        });
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn linear_matches_hand_computation() {
        let x = array![[1.0f32, 2.0], [0.5, -1.0]];
        let w = Param2::F32(array![[1.0f32, 0.0], [0.0, 1.0], [1.0, 1.0]]);
        let bias = Array1::from(vec![0.0f32, 10.0, 0.0]);
        let y = linear(&x, &w, Some(&bias));
        assert_eq!(y, array![[1.0, 12.0, 3.0], [0.5, 9.0, -0.5]]);
    }

    #[test]
    fn half_storage_upcasts_per_element() {
        let w32 = array![[1.5f32, -2.25], [0.125, 4.0]];
        let w16 = Param2::F32(w32.clone()).into_precision(super::super::Precision::Half);
        let x = array![[1.0f32, 1.0]];
        // These weights are exactly representable in f16.
        assert_eq!(linear(&x, &w16, None), linear(&x, &Param2::F32(w32), None));
    }

    #[test]
    fn rmsnorm_unit_scale() {
        let x = array![[3.0f32, 4.0]];
        let norm = NormWeights { weight: Array1::from(vec![1.0f32, 1.0]), bias: None };
        let y = apply_norm(&x, &norm, NormKind::Rmsnorm, 0.0);
        // rms = sqrt((9+16)/2), so y = x / rms
        let rms = (25.0f64 / 2.0).sqrt();
        assert!((y[(0, 0)] as f64 - 3.0 / rms).abs() < 1e-7);
        assert!((y[(0, 1)] as f64 - 4.0 / rms).abs() < 1e-7);
    }

    #[test]
    fn layernorm_centers_and_scales() {
        let x = array![[1.0f32, 3.0]];
        let norm = NormWeights {
            weight: Array1::from(vec![1.0f32, 1.0]),
            bias: Some(Array1::from(vec![0.0f32, 0.0])),
        };
        let y = apply_norm(&x, &norm, NormKind::Layernorm, 0.0);
        assert!((y[(0, 0)] + 1.0).abs() < 1e-6);
        assert!((y[(0, 1)] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rotary_preserves_pair_norms() {
        let mut x = array![[1.0f32, 2.0, 3.0, 4.0]];
        let before: f64 = x.iter().map(|&v| (v as f64).powi(2)).sum();
        apply_rotary(&mut x, 1, 4, &[7], 10_000.0);
        let after: f64 = x.iter().map(|&v| (v as f64).powi(2)).sum();
        assert!((before - after).abs() < 1e-5);
    }

    #[test]
    fn rotary_at_position_zero_is_identity() {
        let mut x = array![[1.0f32, 2.0, 3.0, 4.0]];
        let orig = x.clone();
        apply_rotary(&mut x, 2, 2, &[0], 10_000.0);
        assert_eq!(x, orig);
    }
}
