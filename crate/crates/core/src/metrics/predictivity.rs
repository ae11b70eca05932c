//! Cross-validated linear predictivity of neural responses from features.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::correlation::{is_constant, pearson_unchecked};
use super::ridge::{column_means, subtract_row, FoldAggregation, RidgeConfig, RidgePath};
use crate::datamodel::ActivationSet;
use crate::error::{validation, Error, Result};
use crate::splits::{contiguous_blocks, FoldPlan, FoldSpec};
use crate::stats::mean;

/// Minimum number of training stimuli in any outer fold.
pub const MIN_TRAIN_ROWS: usize = 10;

/// Outcome of one outer fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutcome {
    pub fold: usize,
    /// Mean test Pearson over non-degenerate units; `None` when every unit
    /// was degenerate and the fold was excluded.
    pub r: Option<f64>,
    pub unit_r: Vec<Option<f64>>,
    /// λ chosen by inner cross-validation (one entry, or one per unit).
    pub lambdas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictivity {
    /// Scores of the folds that were not excluded, in fold order.
    pub per_fold_r: Vec<f64>,
    pub mean_r: f64,
    pub excluded_folds: Vec<usize>,
    /// Degenerate (fold, unit) pairs left out of fold means.
    pub degenerate_units: usize,
    pub folds: Vec<FoldOutcome>,
}

/// Scores how well ridge regression from `acts` predicts `neural`, one
/// target column per unit, under the outer partition `folds`.
pub fn linear_predictivity(
    acts: &ActivationSet,
    neural: &DMatrix<f64>,
    folds: &FoldSpec,
    cfg: &RidgeConfig,
) -> Result<Predictivity> {
    if neural.nrows() != acts.matrix().nrows() {
        return Err(Error::Shape(format!(
            "activations have {} rows, neural data {}",
            acts.matrix().nrows(),
            neural.nrows()
        )));
    }
    let plans = folds.plan(acts.stimulus_ids())?;
    predictivity_with_plan(acts.matrix(), neural, &plans, cfg)
}

/// Same as [`linear_predictivity`] with explicit train/test row sets.
pub fn predictivity_with_plan(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    plans: &[FoldPlan],
    cfg: &RidgeConfig,
) -> Result<Predictivity> {
    cfg.validate()?;
    if x.nrows() != y.nrows() {
        return Err(Error::Shape(format!(
            "design has {} rows, targets {}",
            x.nrows(),
            y.nrows()
        )));
    }
    if x.ncols() == 0 || y.ncols() == 0 {
        return Err(Error::Shape("empty design or target matrix".into()));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(validation!("non-finite values in predictivity inputs"));
    }
    for (f, plan) in plans.iter().enumerate() {
        if plan.train.len() < MIN_TRAIN_ROWS.max(cfg.inner_folds) {
            return Err(validation!(
                "fold {f} trains on {} stimuli; at least {} required",
                plan.train.len(),
                MIN_TRAIN_ROWS.max(cfg.inner_folds)
            ));
        }
    }

    let folds: Vec<FoldOutcome> = plans
        .par_iter()
        .enumerate()
        .map(|(f, plan)| score_fold(f, x, y, plan, cfg))
        .collect();

    let per_fold_r: Vec<f64> = folds.iter().filter_map(|o| o.r).collect();
    let excluded_folds: Vec<usize> = folds.iter().filter(|o| o.r.is_none()).map(|o| o.fold).collect();
    let degenerate_units = folds
        .iter()
        .map(|o| o.unit_r.iter().filter(|r| r.is_none()).count())
        .sum();
    for f in &excluded_folds {
        log::warn!("fold {f} excluded: every unit degenerate");
    }
    if per_fold_r.is_empty() {
        return Err(Error::ScoreUndefined(format!(
            "all {} folds degenerate",
            plans.len()
        )));
    }
    let mean_r = match cfg.aggregation {
        FoldAggregation::UnitsThenFolds => mean(&per_fold_r),
        FoldAggregation::PooledUnits => {
            let pooled: Vec<f64> = folds.iter().flat_map(|o| o.unit_r.iter().flatten().copied()).collect();
            mean(&pooled)
        }
    };
    Ok(Predictivity {
        per_fold_r,
        mean_r,
        excluded_folds,
        degenerate_units,
        folds,
    })
}

fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    m.select_rows(rows.iter())
}

/// Column means and scales from `train`; zero-spread columns keep scale 1.
fn fit_scaler(train: &DMatrix<f64>, standardize: bool) -> (DVector<f64>, DVector<f64>) {
    let means = column_means(train);
    let n = train.nrows() as f64;
    let scales = DVector::from_iterator(
        train.ncols(),
        train.column_iter().zip(means.iter()).map(|(col, m)| {
            if !standardize {
                return 1.0;
            }
            let sd = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
            if sd > 0.0 && sd.is_finite() {
                sd
            } else {
                1.0
            }
        }),
    );
    (means, scales)
}

fn apply_scaler(m: &DMatrix<f64>, means: &DVector<f64>, scales: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    subtract_row(&mut out, means);
    for (mut col, s) in out.column_iter_mut().zip(scales.iter()) {
        col /= *s;
    }
    out
}

fn score_fold(fold: usize, x: &DMatrix<f64>, y: &DMatrix<f64>, plan: &FoldPlan, cfg: &RidgeConfig) -> FoldOutcome {
    let (x_tr, y_tr) = (select_rows(x, &plan.train), select_rows(y, &plan.train));
    let (x_te, y_te) = (select_rows(x, &plan.test), select_rows(y, &plan.test));

    let (xm, xs) = fit_scaler(&x_tr, cfg.standardize);
    let (ym, ys) = fit_scaler(&y_tr, cfg.standardize);
    let x_tr = apply_scaler(&x_tr, &xm, &xs);
    let x_te = apply_scaler(&x_te, &xm, &xs);
    let y_tr = apply_scaler(&y_tr, &ym, &ys);
    let y_te = apply_scaler(&y_te, &ym, &ys);

    let lambdas = select_lambda(&x_tr, &y_tr, cfg);

    // training data are centered by the scaler, so no intercept remains
    let path = RidgePath::new(&x_tr, &y_tr);
    let weights = if lambdas.len() == 1 {
        path.weights(lambdas[0])
    } else {
        path.weights_per_column(&lambdas)
    };
    let pred = &x_te * weights;

    let unit_r: Vec<Option<f64>> = (0..y_te.ncols())
        .map(|u| column_pearson(&pred, &y_te, u))
        .collect();
    let valid: Vec<f64> = unit_r.iter().flatten().copied().collect();
    FoldOutcome {
        fold,
        r: (!valid.is_empty()).then(|| mean(&valid)),
        unit_r,
        lambdas,
    }
}

fn column_pearson(pred: &DMatrix<f64>, actual: &DMatrix<f64>, col: usize) -> Option<f64> {
    if pred.nrows() < 3 {
        return None;
    }
    let p: Vec<f64> = pred.column(col).iter().copied().collect();
    let a: Vec<f64> = actual.column(col).iter().copied().collect();
    if is_constant(&p) || is_constant(&a) {
        return None;
    }
    Some(pearson_unchecked(&p, &a))
}

/// Picks λ by inner cross-validation over contiguous blocks of the training
/// rows. Out-of-fold predictions are pooled over the inner folds and scored
/// per unit by Pearson; the shared λ maximizes the mean over units.
fn select_lambda(x: &DMatrix<f64>, y: &DMatrix<f64>, cfg: &RidgeConfig) -> Vec<f64> {
    let n = x.nrows();
    let grid = &cfg.lambda_grid;
    if grid.len() == 1 {
        return vec![grid[0]];
    }
    let k = cfg.inner_folds.min(n);
    let q = y.ncols();
    let mut oof: Vec<DMatrix<f64>> = vec![DMatrix::zeros(n, q); grid.len()];
    for block in contiguous_blocks(n, k) {
        let test: Vec<usize> = block.clone().collect();
        let train: Vec<usize> = (0..n).filter(|i| !block.contains(i)).collect();
        let (mut xi, mut yi) = (select_rows(x, &train), select_rows(y, &train));
        let (xmi, ymi) = (column_means(&xi), column_means(&yi));
        subtract_row(&mut xi, &xmi);
        subtract_row(&mut yi, &ymi);
        let mut xt = select_rows(x, &test);
        subtract_row(&mut xt, &xmi);
        let path = RidgePath::new(&xi, &yi);
        for (li, lambda) in grid.iter().enumerate() {
            let mut pred = &xt * path.weights(*lambda);
            for mut row in pred.row_iter_mut() {
                row += ymi.transpose();
            }
            for (r, &row) in test.iter().enumerate() {
                oof[li].set_row(row, &pred.row(r));
            }
        }
    }

    let scores: Vec<Vec<Option<f64>>> = oof
        .iter()
        .map(|pred| (0..q).map(|u| column_pearson(pred, y, u)).collect())
        .collect();

    if cfg.per_unit_lambda {
        (0..q)
            .map(|u| {
                let column: Vec<Option<f64>> = scores.iter().map(|s| s[u]).collect();
                grid[argmax(&column)]
            })
            .collect()
    } else {
        let means: Vec<Option<f64>> = scores
            .iter()
            .map(|s| {
                let valid: Vec<f64> = s.iter().flatten().copied().collect();
                (!valid.is_empty()).then(|| mean(&valid))
            })
            .collect();
        vec![grid[argmax(&means)]]
    }
}

/// Index of the best score; ties and all-undefined resolve to the largest λ.
fn argmax(scores: &[Option<f64>]) -> usize {
    let mut best = scores.len() - 1;
    let mut best_score = f64::NEG_INFINITY;
    for (i, s) in scores.iter().enumerate().rev() {
        if let Some(s) = s {
            if *s > best_score {
                best_score = *s;
                best = i;
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splits::{make_grouped_folds, make_random_folds};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};
    use std::collections::BTreeMap;

    fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i:03}")).collect()
    }

    #[test]
    fn argmax_prefers_larger_lambda_on_ties() {
        assert_eq!(argmax(&[Some(0.5), Some(0.5), Some(0.1)]), 1);
        assert_eq!(argmax(&[None, None]), 1);
        assert_eq!(argmax(&[Some(0.9), None, Some(0.2)]), 0);
    }

    #[test]
    fn perfect_map_grouped() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = gaussian(60, 8, &mut rng);
        let groups: BTreeMap<String, String> =
            ids(60).into_iter().enumerate().map(|(i, id)| (id, format!("g{}", i / 6))).collect();
        let folds = make_grouped_folds(&groups, 5, 2).unwrap();
        let acts = ActivationSet::new(x.clone(), ids(60), "m", 0, "l", None).unwrap();
        let res = linear_predictivity(&acts, &x, &folds, &RidgeConfig::default()).unwrap();
        assert!((res.mean_r - 1.0).abs() < 1e-9, "{}", res.mean_r);
        assert_eq!(res.per_fold_r.len(), 5);
    }

    #[test]
    fn degenerate_units_are_excluded() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = gaussian(40, 5, &mut rng);
        let mut y = DMatrix::zeros(40, 2);
        y.set_column(0, &x.column(0));
        // unit 1 stays constant
        let folds = make_random_folds(&ids(40), 4, 0).unwrap();
        let acts = ActivationSet::new(x, ids(40), "m", 0, "l", None).unwrap();
        let res = linear_predictivity(&acts, &y, &folds, &RidgeConfig::default()).unwrap();
        assert_eq!(res.degenerate_units, 4);
        assert!(res.mean_r > 0.99);
    }

    #[test]
    fn all_degenerate_is_undefined() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = gaussian(30, 3, &mut rng);
        let y = DMatrix::from_element(30, 2, 1.5);
        let folds = make_random_folds(&ids(30), 3, 0).unwrap();
        let acts = ActivationSet::new(x, ids(30), "m", 0, "l", None).unwrap();
        let err = linear_predictivity(&acts, &y, &folds, &RidgeConfig::default()).unwrap_err();
        assert!(matches!(err, Error::ScoreUndefined(_)));
    }

    #[test]
    fn too_few_training_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = gaussian(8, 2, &mut rng);
        let folds = make_random_folds(&ids(8), 2, 0).unwrap();
        let acts = ActivationSet::new(x.clone(), ids(8), "m", 0, "l", None).unwrap();
        assert!(matches!(
            linear_predictivity(&acts, &x, &folds, &RidgeConfig::default()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn per_unit_lambda_runs_and_mean_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = gaussian(50, 6, &mut rng);
        let noise = gaussian(50, 3, &mut rng);
        let y = x.columns(0, 3) + noise * 0.5;
        let folds = make_random_folds(&ids(50), 5, 0).unwrap();
        let acts = ActivationSet::new(x, ids(50), "m", 0, "l", None).unwrap();
        let cfg = RidgeConfig {
            per_unit_lambda: true,
            ..RidgeConfig::default()
        };
        let res = linear_predictivity(&acts, &y, &folds, &cfg).unwrap();
        assert!(res.folds.iter().all(|f| f.lambdas.len() == 3));
        assert_eq!(res.mean_r, mean(&res.per_fold_r));
        assert!(res.mean_r > 0.5);
    }
}
