use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::{Sided, StatisticName, TestResult};
use crate::error::{validation, Error, Result};
use crate::metrics::pearson;
use crate::splits::contiguous_blocks;
use crate::stats::mean;

/// Ridge penalty on the (standardized) slope.
pub const TRAJECTORY_LAMBDA: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryOptions {
    pub k: usize,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub intercept: bool,
    /// Shuffle checkpoints into folds instead of contiguous blocks.
    #[serde(default)]
    pub shuffled: bool,
}

fn default_true() -> bool {
    true
}

impl Default for TrajectoryOptions {
    fn default() -> Self {
        TrajectoryOptions {
            k: crate::splits::DEFAULT_K,
            seed: 0,
            intercept: true,
            shuffled: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFit {
    pub predictor_series: String,
    pub target_series: String,
    /// Out-of-sample R² of each scored fold (may be negative).
    pub per_fold_r2: Vec<f64>,
    pub mean_r2: f64,
    /// Folds skipped because the test target was constant.
    pub skipped_folds: Vec<usize>,
    /// Slope and intercept of the fit on all checkpoints, in raw units.
    pub weight: f64,
    pub intercept: f64,
    pub n_checkpoints: usize,
}

/// Points present in both series, ordered by checkpoint.
pub(crate) fn join_series(x: &[(u64, f64)], y: &[(u64, f64)]) -> Vec<(u64, f64, f64)> {
    let mut out: Vec<(u64, f64, f64)> = x
        .iter()
        .filter_map(|(c, xv)| y.iter().find(|(cy, _)| cy == c).map(|(_, yv)| (*c, *xv, *yv)))
        .collect();
    out.sort_by_key(|p| p.0);
    out
}

/// Single-slope ridge: returns (slope, intercept) in raw predictor units.
fn fit_line(x: &[f64], y: &[f64], intercept: bool) -> (f64, f64) {
    if intercept {
        let (mx, my) = (mean(x), mean(y));
        let sd = (x.iter().map(|v| (v - mx) * (v - mx)).sum::<f64>() / x.len() as f64).sqrt();
        if sd == 0.0 {
            return (0.0, my);
        }
        let z: Vec<f64> = x.iter().map(|v| (v - mx) / sd).collect();
        let szy: f64 = z.iter().zip(y).map(|(a, b)| a * (b - my)).sum();
        let szz: f64 = z.iter().map(|a| a * a).sum();
        let wz = szy / (szz + TRAJECTORY_LAMBDA);
        (wz / sd, my - wz * mx / sd)
    } else {
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        let sxx: f64 = x.iter().map(|a| a * a).sum();
        (sxy / (sxx + TRAJECTORY_LAMBDA), 0.0)
    }
}

/// Cross-validated R² of predicting `target` from `predictor` across
/// training checkpoints with a one-slope ridge model.
pub fn trajectory_r2(
    predictor_id: &str,
    predictor: &[(u64, f64)],
    target_id: &str,
    target: &[(u64, f64)],
    opts: &TrajectoryOptions,
) -> Result<TrajectoryFit> {
    let points = join_series(predictor, target);
    let n = points.len();
    if opts.k < 2 || n < opts.k {
        return Err(validation!(
            "trajectory_r2 needs n >= k >= 2, got n = {n}, k = {}",
            opts.k
        ));
    }
    if points.iter().any(|p| !p.1.is_finite() || !p.2.is_finite()) {
        return Err(validation!("trajectory series must be finite"));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.1).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.2).collect();

    let folds: Vec<Vec<usize>> = if opts.shuffled {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(opts.seed));
        (0..opts.k)
            .map(|f| order.iter().copied().skip(f).step_by(opts.k).collect())
            .collect()
    } else {
        contiguous_blocks(n, opts.k).into_iter().map(|r| r.collect()).collect()
    };

    let mut per_fold_r2 = Vec::with_capacity(opts.k);
    let mut skipped_folds = Vec::new();
    for (f, test) in folds.iter().enumerate() {
        let test_y: Vec<f64> = test.iter().map(|&i| ys[i]).collect();
        let test_mean = mean(&test_y);
        let ss_tot: f64 = test_y.iter().map(|v| (v - test_mean) * (v - test_mean)).sum();
        if test.len() < 2 || ss_tot == 0.0 {
            skipped_folds.push(f);
            continue;
        }
        let train: Vec<usize> = (0..n).filter(|i| !test.contains(i)).collect();
        let tx: Vec<f64> = train.iter().map(|&i| xs[i]).collect();
        let ty: Vec<f64> = train.iter().map(|&i| ys[i]).collect();
        let (w, b) = fit_line(&tx, &ty, opts.intercept);
        let ss_res: f64 = test
            .iter()
            .map(|&i| {
                let r = ys[i] - (w * xs[i] + b);
                r * r
            })
            .sum();
        per_fold_r2.push(1.0 - ss_res / ss_tot);
    }
    if per_fold_r2.is_empty() {
        return Err(Error::ScoreUndefined(
            "every trajectory fold has a constant target".into(),
        ));
    }
    let (weight, intercept) = fit_line(&xs, &ys, opts.intercept);
    Ok(TrajectoryFit {
        predictor_series: predictor_id.to_string(),
        target_series: target_id.to_string(),
        mean_r2: mean(&per_fold_r2),
        per_fold_r2,
        skipped_folds,
        weight,
        intercept,
        n_checkpoints: n,
    })
}

/// Half-open checkpoint range `(after, up_to]` in training tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenWindow {
    pub after: u64,
    pub up_to: u64,
}

impl TokenWindow {
    pub fn contains(&self, tokens: u64) -> bool {
        tokens > self.after && tokens <= self.up_to
    }
}

/// Pearson correlation with a two-sided t-test (n − 2 df) over the
/// checkpoints inside `window`.
pub fn windowed_correlation(x: &[(u64, f64)], y: &[(u64, f64)], window: TokenWindow) -> Result<TestResult> {
    let points: Vec<(u64, f64, f64)> = join_series(x, y)
        .into_iter()
        .filter(|p| window.contains(p.0))
        .collect();
    let n = points.len();
    if n < 3 {
        return Err(Error::TestUndefined(format!(
            "{n} checkpoints in window ({}, {}]",
            window.after, window.up_to
        )));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.1).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.2).collect();
    let r = pearson(&xs, &ys).map_err(|e| Error::TestUndefined(e.to_string()))?;
    let df = (n - 2) as f64;
    let p_value = if r.abs() >= 1.0 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
        (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
    };
    Ok(TestResult {
        statistic_name: StatisticName::PearsonR,
        statistic: r,
        p_value,
        n,
        sided: Sided::TwoSided,
    })
}
