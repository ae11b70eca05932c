//! Cross-subject consistency (noise ceiling) estimation.
//!
//! Each subject is predicted from the concatenated units of the other
//! subjects in a pool. Consistency is measured for growing pool sizes and
//! extrapolated to an infinite pool with the saturating curve
//! `v(s) = v_inf · s / (s + tau)`.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::NeuralDataset;
use crate::error::{validation, Error, Result};
use crate::metrics::{predictivity_with_plan, RidgeConfig};
use crate::splits::FoldSpec;
use crate::stats::mean;

/// Default number of random subject subsets per pool size.
pub const DEFAULT_DRAWS: usize = 10;

/// Search box for the saturating-curve fit.
pub const V_INF_RANGE: (f64, f64) = (0.0, 1.5);
pub const TAU_RANGE: (f64, f64) = (0.1, 50.0);

/// Allowed shortfall of the asymptote below the largest measured pool value.
pub const SANITY_BAND: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CeilingMethod {
    Extrapolated,
    Fixed,
    Theoretical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolPoint {
    pub pool_size: usize,
    pub mean_r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeilingEstimate {
    pub benchmark_id: String,
    pub pool_curve: Vec<PoolPoint>,
    /// The ceiling: extrapolated asymptote, full-pool value, or injected constant.
    pub v_inf: f64,
    pub tau: Option<f64>,
    pub method: CeilingMethod,
}

impl CeilingEstimate {
    /// A ceiling supplied from outside (e.g. a published theoretical value).
    pub fn theoretical(benchmark_id: impl Into<String>, value: f64) -> Result<Self> {
        if !(value.is_finite() && value > 0.0) {
            return Err(validation!("theoretical ceiling must be positive, got {value}"));
        }
        Ok(CeilingEstimate {
            benchmark_id: benchmark_id.into(),
            pool_curve: Vec::new(),
            v_inf: value,
            tau: None,
            method: CeilingMethod::Theoretical,
        })
    }

    pub fn value(&self) -> f64 {
        self.v_inf
    }
}

/// Column-wise concatenation of the given subjects' matrices.
fn concat_subjects(neural: &NeuralDataset, ids: &[&str]) -> DMatrix<f64> {
    let mats: Vec<&DMatrix<f64>> = ids
        .iter()
        .map(|id| &neural.subject(id).expect("pool members exist").matrix)
        .collect();
    let cols = mats.iter().map(|m| m.ncols()).sum();
    let mut out = DMatrix::zeros(neural.stimulus_ids().len(), cols);
    let mut offset = 0;
    for m in mats {
        out.columns_mut(offset, m.ncols()).copy_from(m);
        offset += m.ncols();
    }
    out
}

/// Mean held-out-subject predictivity within `pool`: each member is
/// predicted from the concatenated units of the other members.
pub fn subject_consistency(
    neural: &NeuralDataset,
    folds: &FoldSpec,
    cfg: &RidgeConfig,
    pool: &[String],
) -> Result<f64> {
    if pool.len() < 2 {
        return Err(validation!("subject_consistency needs a pool of at least 2 subjects"));
    }
    for id in pool {
        if neural.subject(id).is_none() {
            return Err(validation!("unknown subject '{id}' in pool"));
        }
    }
    let plans = folds.plan(neural.stimulus_ids())?;
    let scores = pool
        .iter()
        .map(|held_out| {
            let others: Vec<&str> = pool
                .iter()
                .filter(|s| *s != held_out)
                .map(String::as_str)
                .collect();
            let x = concat_subjects(neural, &others);
            let y = &neural.subject(held_out).expect("checked").matrix;
            predictivity_with_plan(&x, y, &plans, cfg).map(|p| p.mean_r)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean(&scores))
}

/// Settings for [`extrapolate_ceiling`].
#[derive(Debug, Clone, PartialEq)]
pub struct CeilingConfig {
    pub draws: usize,
    pub seed: u64,
}

impl Default for CeilingConfig {
    fn default() -> Self {
        CeilingConfig {
            draws: DEFAULT_DRAWS,
            seed: 0,
        }
    }
}

/// Measures consistency for every pool size and extrapolates to an
/// infinite pool. Datasets with fewer than 3 subjects get the full-pool
/// value with `method = Fixed`.
pub fn extrapolate_ceiling(
    benchmark_id: &str,
    neural: &NeuralDataset,
    folds: &FoldSpec,
    ridge: &RidgeConfig,
    cfg: &CeilingConfig,
) -> Result<CeilingEstimate> {
    if cfg.draws == 0 {
        return Err(validation!("draws must be at least 1"));
    }
    let subjects = neural.subject_ids();
    let total = subjects.len();
    if total < 2 {
        return Err(validation!(
            "a ceiling needs at least 2 subjects, '{benchmark_id}' has {total}"
        ));
    }
    if total < 3 {
        log::warn!("{benchmark_id}: {total} subjects, ceiling computed without extrapolation");
        let value = subject_consistency(neural, folds, ridge, &subjects)?;
        if value.is_nan() || value <= 0.0 {
            return Err(Error::Fit {
                message: format!("full-pool consistency {value} is not positive"),
                pool_curve: vec![PoolPoint { pool_size: total, mean_r: value }],
            });
        }
        return Ok(CeilingEstimate {
            benchmark_id: benchmark_id.to_string(),
            pool_curve: vec![PoolPoint {
                pool_size: total,
                mean_r: value,
            }],
            v_inf: value,
            tau: None,
            method: CeilingMethod::Fixed,
        });
    }

    // draw every subset up front so the parallel evaluation order is irrelevant
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut jobs: Vec<(usize, Vec<String>)> = Vec::new();
    for size in 2..=total {
        let draws = if size == total { 1 } else { cfg.draws };
        for _ in 0..draws {
            let mut idx = sample(&mut rng, total, size).into_vec();
            idx.sort_unstable();
            jobs.push((size, idx.into_iter().map(|i| subjects[i].clone()).collect()));
        }
    }
    let values = jobs
        .par_iter()
        .map(|(_, pool)| subject_consistency(neural, folds, ridge, pool))
        .collect::<Result<Vec<f64>>>()?;

    let pool_curve: Vec<PoolPoint> = (2..=total)
        .map(|size| {
            let at_size: Vec<f64> = jobs
                .iter()
                .zip(&values)
                .filter(|((s, _), _)| *s == size)
                .map(|(_, v)| *v)
                .collect();
            PoolPoint {
                pool_size: size,
                mean_r: mean(&at_size),
            }
        })
        .collect();

    let (v_inf, tau) = fit_saturating_curve(&pool_curve)?;
    Ok(CeilingEstimate {
        benchmark_id: benchmark_id.to_string(),
        pool_curve,
        v_inf,
        tau: Some(tau),
        method: CeilingMethod::Extrapolated,
    })
}

fn curve(s: f64, tau: f64) -> f64 {
    s / (s + tau)
}

/// Best asymptote for a fixed `tau` (closed form, clamped to the box) and
/// the resulting sum of squared residuals.
fn profile(points: &[PoolPoint], tau: f64) -> (f64, f64) {
    let (mut gy, mut gg) = (0.0, 0.0);
    for p in points {
        let g = curve(p.pool_size as f64, tau);
        gy += g * p.mean_r;
        gg += g * g;
    }
    let v = (gy / gg).clamp(V_INF_RANGE.0, V_INF_RANGE.1);
    let sse = points
        .iter()
        .map(|p| {
            let r = p.mean_r - v * curve(p.pool_size as f64, tau);
            r * r
        })
        .sum();
    (v, sse)
}

/// Least-squares fit of `v(s) = v_inf · s / (s + tau)`.
///
/// `v_inf` is profiled out in closed form; `tau` is located on a log grid
/// over [`TAU_RANGE`] and refined by golden-section search.
pub fn fit_saturating_curve(points: &[PoolPoint]) -> Result<(f64, f64)> {
    let fail = |message: String| Error::Fit {
        message,
        pool_curve: points.to_vec(),
    };
    if points.len() < 2 {
        return Err(fail("need at least 2 pool sizes".into()));
    }
    if points.windows(2).any(|w| w[0].pool_size >= w[1].pool_size) {
        return Err(fail("pool sizes must be strictly increasing".into()));
    }
    if points.iter().any(|p| !p.mean_r.is_finite() || p.pool_size == 0) {
        return Err(fail("non-finite consistency value".into()));
    }

    const GRID: usize = 400;
    let (lo, hi) = (TAU_RANGE.0.ln(), TAU_RANGE.1.ln());
    let log_tau = |i: usize| lo + (hi - lo) * i as f64 / (GRID - 1) as f64;
    let best = (0..GRID)
        .min_by(|&a, &b| {
            profile(points, log_tau(a).exp())
                .1
                .total_cmp(&profile(points, log_tau(b).exp()).1)
        })
        .expect("grid is non-empty");

    // golden-section refinement in log(tau) on the bracketing grid cells
    let (mut a, mut b) = (log_tau(best.saturating_sub(1)), log_tau((best + 1).min(GRID - 1)));
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let sse = |t: f64| profile(points, t.exp()).1;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    for _ in 0..200 {
        if (b - a).abs() < 1e-12 {
            break;
        }
        if sse(c) < sse(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - inv_phi * (b - a);
        d = a + inv_phi * (b - a);
    }
    let tau = ((a + b) / 2.0).exp();
    let (v_inf, residual) = profile(points, tau);
    if !residual.is_finite() || !v_inf.is_finite() {
        return Err(fail("fit did not converge".into()));
    }
    if v_inf <= 0.0 {
        return Err(fail(format!("extrapolated ceiling {v_inf} is not positive")));
    }
    let observed_max = points.iter().map(|p| p.mean_r).fold(f64::NEG_INFINITY, f64::max);
    if v_inf < observed_max - SANITY_BAND {
        return Err(fail(format!(
            "asymptote {v_inf:.4} falls below the measured maximum {observed_max:.4}"
        )));
    }
    Ok((v_inf, tau))
}
