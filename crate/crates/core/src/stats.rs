//! Rank statistics: one-sided Mann-Whitney U and Spearman rank correlation.
//!
//! Mann-Whitney p-values come from exact enumeration over rank assignments
//! when the combined sample is small enough to enumerate cheaply, and from a
//! tie-corrected, continuity-corrected normal approximation otherwise. Ties
//! always receive average ranks.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use thiserror::Error;

/// Largest number of rank assignments enumerated exactly; covers every
/// sample-size pair with n1, n2 <= 8.
const EXACT_ENUMERATION_LIMIT: f64 = 13_000.0;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("both samples must be non-empty")]
    EmptySample,
    #[error("inputs must have equal length (got {0} and {1})")]
    LengthMismatch(usize, usize),
    #[error("spearman needs at least 3 paired observations, got {0}")]
    TooFewObservations(usize),
    #[error("inputs contain a non-finite value")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MannWhitneyResult {
    /// U statistic for the first sample.
    pub u_statistic: f64,
    /// One-sided p-value, alternative: the first sample is stochastically
    /// greater.
    pub p_value: f64,
    pub n1: usize,
    pub n2: usize,
    /// Ties were present (average ranks / tie-corrected variance applied).
    pub tie_corrected: bool,
    /// The p-value came from exact enumeration rather than the normal
    /// approximation.
    pub exact: bool,
    /// All values identical: no ordering information, p fixed at 0.5.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SpearmanResult {
    pub rho: f64,
    /// Two-sided p-value from the t-approximation with n-2 degrees of
    /// freedom.
    pub p_value: f64,
    pub n: usize,
    /// One input had zero rank variance; rho is undefined (NaN).
    pub degenerate: bool,
}

/// 1-based average ranks.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![0.0f64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions i..=j share value; average of ranks i+1 ..= j+1.
        let avg = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn check_finite(values: &[f64]) -> Result<(), StatsError> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// Exact one-sided p-value: the fraction of equally likely assignments of
/// the combined ranks to the first sample with U at least the observed U.
fn exact_p(ranks: &[f64], n1: usize, u_observed: f64) -> f64 {
    let n = ranks.len();
    let offset = (n1 * (n1 + 1)) as f64 / 2.0;
    let mut at_least = 0u64;
    let mut total = 0u64;
    // Lexicographic walk over all n1-subsets of 0..n.
    let mut idx: Vec<usize> = (0..n1).collect();
    loop {
        let rank_sum: f64 = idx.iter().map(|&i| ranks[i]).sum();
        let u = rank_sum - offset;
        total += 1;
        if u >= u_observed - 1e-9 {
            at_least += 1;
        }
        // Advance to the next combination.
        let mut pos = n1;
        loop {
            if pos == 0 {
                return at_least as f64 / total as f64;
            }
            pos -= 1;
            if idx[pos] != pos + n - n1 {
                break;
            }
        }
        idx[pos] += 1;
        for i in pos + 1..n1 {
            idx[i] = idx[i - 1] + 1;
        }
    }
}

/// One-sided Mann-Whitney U test with alternative "sample_a stochastically
/// greater than sample_b".
pub fn mann_whitney_one_sided(
    sample_a: &[f64],
    sample_b: &[f64],
) -> Result<MannWhitneyResult, StatsError> {
    if sample_a.is_empty() || sample_b.is_empty() {
        return Err(StatsError::EmptySample);
    }
    check_finite(sample_a)?;
    check_finite(sample_b)?;
    let n1 = sample_a.len();
    let n2 = sample_b.len();
    let n = n1 + n2;

    let mut combined = Vec::with_capacity(n);
    combined.extend_from_slice(sample_a);
    combined.extend_from_slice(sample_b);
    let ranks = average_ranks(&combined);
    let rank_sum_a: f64 = ranks[..n1].iter().sum();
    let u = rank_sum_a - (n1 * (n1 + 1)) as f64 / 2.0;

    // Tie bookkeeping over the combined sample.
    let mut sorted = combined.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut tie_term = 0.0f64;
    let mut ties_present = false;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        if t > 1.0 {
            ties_present = true;
            tie_term += t * t * t - t;
        }
        i = j + 1;
    }

    // All values identical: no ordering information at all.
    if sorted.first() == sorted.last() {
        return Ok(MannWhitneyResult {
            u_statistic: u,
            p_value: 0.5,
            n1,
            n2,
            tie_corrected: ties_present,
            exact: false,
            degenerate: true,
        });
    }

    if binomial(n, n1.min(n2)) <= EXACT_ENUMERATION_LIMIT {
        let p = exact_p(&ranks, n1, u);
        return Ok(MannWhitneyResult {
            u_statistic: u,
            p_value: p,
            n1,
            n2,
            tie_corrected: ties_present,
            exact: true,
            degenerate: false,
        });
    }

    let mean = (n1 * n2) as f64 / 2.0;
    let nf = n as f64;
    let var = (n1 * n2) as f64 / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
    if var <= 0.0 {
        return Ok(MannWhitneyResult {
            u_statistic: u,
            p_value: 0.5,
            n1,
            n2,
            tie_corrected: ties_present,
            exact: false,
            degenerate: true,
        });
    }
    let z = (u - mean - 0.5) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let p = (1.0 - normal.cdf(z)).clamp(0.0, 1.0);
    Ok(MannWhitneyResult {
        u_statistic: u,
        p_value: p,
        n1,
        n2,
        tie_corrected: ties_present,
        exact: false,
        degenerate: false,
    })
}

/// Spearman rank correlation with average ranks and a two-sided t-approx
/// p-value (n - 2 degrees of freedom).
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<SpearmanResult, StatsError> {
    if xs.len() != ys.len() {
        return Err(StatsError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 3 {
        return Err(StatsError::TooFewObservations(xs.len()));
    }
    check_finite(xs)?;
    check_finite(ys)?;
    let n = xs.len();
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);

    let untied =
        |r: &[f64]| r.iter().all(|v| v.fract() == 0.0) && {
            let mut sorted = r.to_vec();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            sorted.windows(2).all(|w| w[0] != w[1])
        };

    let mean = (n + 1) as f64 / 2.0;
    let mut cov = 0.0f64;
    let mut var_x = 0.0f64;
    let mut var_y = 0.0f64;
    for i in 0..n {
        let dx = rx[i] - mean;
        let dy = ry[i] - mean;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if var_x == 0.0 || var_y == 0.0 {
        return Ok(SpearmanResult { rho: f64::NAN, p_value: 1.0, n, degenerate: true });
    }
    // Without ties the rank-difference identity is exact in f64 (small
    // integers throughout); with ties, fall back to the product-moment form.
    let rho = if untied(&rx) && untied(&ry) {
        let d_sq: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b) * (a - b)).sum();
        1.0 - 6.0 * d_sq / (n as f64 * ((n * n - 1) as f64))
    } else {
        (cov / (var_x.sqrt() * var_y.sqrt())).clamp(-1.0, 1.0)
    };
    let rho = rho.clamp(-1.0, 1.0);

    let df = (n - 2) as f64;
    let p_value = if rho.abs() >= 1.0 - 1e-15 {
        0.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("valid degrees of freedom");
        (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
    };
    Ok(SpearmanResult { rho, p_value, n, degenerate: false })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[1.0, 2.0, 2.0, 4.0, 5.0]), vec![1.0, 2.5, 2.5, 4.0, 5.0]);
    }

    #[test]
    fn identical_large_samples_centre_on_half() {
        let a: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let r = mann_whitney_one_sided(&a, &a).unwrap();
        assert_eq!(r.u_statistic, 50.0 * 50.0 / 2.0);
        assert!((r.p_value - 0.5).abs() < 0.05, "p = {}", r.p_value);
        assert!(!r.exact);
    }

    #[test]
    fn all_identical_values_are_degenerate() {
        let r = mann_whitney_one_sided(&[3.0, 3.0, 3.0], &[3.0, 3.0]).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p_value, 0.5);
        assert_eq!(r.u_statistic, 3.0);
    }

    #[test]
    fn complete_separation_small_sample() {
        let r = mann_whitney_one_sided(&[10.0, 11.0, 12.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r.u_statistic, 9.0);
        assert!(r.exact);
        // Exactly one of C(6,3)=20 assignments reaches U = 9.
        assert!((r.p_value - 1.0 / 20.0).abs() < 1e-12);
    }

    #[test]
    fn u_is_maximal_under_complete_separation() {
        let r = mann_whitney_one_sided(&[5.0, 6.0, 7.0, 8.0], &[0.0, 1.0]).unwrap();
        assert_eq!(r.u_statistic, (4 * 2) as f64);
    }

    #[test]
    fn u_complement_identity_with_ties() {
        let a = [1.0, 2.0, 2.0, 7.5];
        let b = [2.0, 3.0, 7.5];
        let ab = mann_whitney_one_sided(&a, &b).unwrap();
        let ba = mann_whitney_one_sided(&b, &a).unwrap();
        assert_eq!(ab.u_statistic + ba.u_statistic, (a.len() * b.len()) as f64);
        assert!(ab.tie_corrected && ba.tie_corrected);
    }

    #[test]
    fn monotone_spearman_hits_the_poles() {
        let xs = [1.0, 2.0, 3.0];
        let r = spearman(&xs, &[10.0, 20.0, 30.0]).unwrap();
        assert_eq!(r.rho, 1.0);
        assert_eq!(r.p_value, 0.0);
        let r = spearman(&xs, &[30.0, 20.0, 10.0]).unwrap();
        assert_eq!(r.rho, -1.0);
    }

    #[test]
    fn constant_input_is_degenerate() {
        let r = spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!(r.degenerate);
        assert!(r.rho.is_nan());
    }

    #[test]
    fn spearman_requires_three_points() {
        assert!(matches!(
            spearman(&[1.0, 2.0], &[1.0, 2.0]),
            Err(StatsError::TooFewObservations(2))
        ));
        assert!(matches!(spearman(&[1.0], &[1.0, 2.0]), Err(StatsError::LengthMismatch(1, 2))));
    }

    #[test]
    fn normal_path_used_for_large_samples() {
        let a: Vec<f64> = (0..100).map(|i| i as f64 + 0.3).collect();
        let b: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let r = mann_whitney_one_sided(&a, &b).unwrap();
        assert!(!r.exact && !r.degenerate);
        assert!(r.p_value > 0.0 && r.p_value < 1.0);
    }
}
