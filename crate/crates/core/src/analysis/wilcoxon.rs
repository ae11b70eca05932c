use statrs::distribution::{ContinuousCDF, Normal};

use super::{Sided, StatisticName, TestResult};
use crate::error::{validation, Error, Result};
use crate::stats::average_ranks;

/// Largest sample size for which the exact null distribution is used.
pub const EXACT_MAX_N: usize = 25;
/// Smallest number of non-zero differences accepted by the test.
pub const MIN_PAIRS: usize = 5;

/// Non-zero differences with their tie-averaged ranks doubled, so every
/// rank is an integer.
fn doubled_ranks(diffs: &[f64]) -> Vec<u64> {
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    average_ranks(&abs).into_iter().map(|r| (2.0 * r) as u64).collect()
}

/// Count of sign assignments reaching each doubled rank sum.
fn null_counts(ranks: &[u64]) -> Vec<f64> {
    let total: u64 = ranks.iter().sum();
    let mut counts = vec![0.0; total as usize + 1];
    counts[0] = 1.0;
    let mut reach = 0usize;
    for &r in ranks {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    counts
}

/// Exact two-sided p of the signed-rank statistic for these differences
/// (zeros dropped, ties given average ranks).
pub fn exact_two_sided_p(diffs: &[f64]) -> Result<f64> {
    let nonzero: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    if nonzero.is_empty() {
        return Err(Error::TestUndefined("all differences are zero".into()));
    }
    let ranks = doubled_ranks(&nonzero);
    let total: u64 = ranks.iter().sum();
    let w_plus: u64 = nonzero
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| *r)
        .sum();
    let w = w_plus.min(total - w_plus) as usize;
    let counts = null_counts(&ranks);
    let tail: f64 = counts[..=w].iter().sum();
    let all = 2f64.powi(nonzero.len() as i32);
    Ok((2.0 * tail / all).min(1.0))
}

/// Wilcoxon signed-rank test on paired samples, two-sided.
///
/// `W = min(W⁺, W⁻)`. The p-value is exact up to [`EXACT_MAX_N`] non-zero
/// differences and otherwise uses the tie-corrected normal approximation
/// with continuity correction.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(validation!("paired samples must be finite"));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if diffs.is_empty() {
        return Err(Error::TestUndefined("all differences are zero".into()));
    }
    let n = diffs.len();
    if n < MIN_PAIRS {
        return Err(Error::TestUndefined(format!(
            "{n} non-zero differences; at least {MIN_PAIRS} required"
        )));
    }
    let ranks = average_ranks(&diffs.iter().map(|d| d.abs()).collect::<Vec<_>>());
    let w_plus: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let statistic = w_plus.min(total - w_plus);

    let p_value = if n <= EXACT_MAX_N {
        exact_two_sided_p(&diffs)?
    } else {
        let nf = n as f64;
        let mut tie_term = 0.0;
        let mut sorted = ranks.clone();
        sorted.sort_by(f64::total_cmp);
        let mut i = 0;
        while i < sorted.len() {
            let mut j = i + 1;
            while j < sorted.len() && sorted[j] == sorted[i] {
                j += 1;
            }
            let t = (j - i) as f64;
            tie_term += t * t * t - t;
            i = j;
        }
        let mean = nf * (nf + 1.0) / 4.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
        let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
        let normal = Normal::standard();
        (2.0 * (1.0 - normal.cdf(z))).clamp(0.0, 1.0)
    };

    Ok(TestResult {
        statistic_name: StatisticName::WilcoxonW,
        statistic,
        p_value,
        n,
        sided: Sided::TwoSided,
    })
}
