use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};

/// How per-fold unit correlations are reduced to one score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldAggregation {
    /// Mean over units within each fold, then mean over folds.
    #[default]
    UnitsThenFolds,
    /// Mean over every (fold, unit) correlation.
    PooledUnits,
}

/// Regularization grid and cross-validation settings for encoding models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeConfig {
    pub lambda_grid: Vec<f64>,
    pub inner_folds: usize,
    pub standardize: bool,
    /// Select λ separately for every target unit instead of one shared λ.
    #[serde(default)]
    pub per_unit_lambda: bool,
    #[serde(default)]
    pub aggregation: FoldAggregation,
}

impl Default for RidgeConfig {
    fn default() -> Self {
        RidgeConfig {
            lambda_grid: (-4..=4).map(|e| 10f64.powi(e)).collect(),
            inner_folds: 5,
            standardize: true,
            per_unit_lambda: false,
            aggregation: FoldAggregation::UnitsThenFolds,
        }
    }
}

impl RidgeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_grid.is_empty() {
            return Err(validation!("lambda_grid is empty"));
        }
        if self.lambda_grid.iter().any(|l| !l.is_finite() || *l <= 0.0) {
            return Err(validation!("lambda_grid entries must be finite and positive"));
        }
        if self.lambda_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(validation!("lambda_grid must be sorted ascending without repeats"));
        }
        if self.inner_folds < 2 {
            return Err(validation!("inner_folds must be at least 2"));
        }
        Ok(())
    }
}

/// Fitted ridge weights: predictions are `x · weights + intercept`.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeModel {
    /// p × q coefficient matrix.
    pub weights: DMatrix<f64>,
    /// One intercept per target column (zero when fitted without intercept).
    pub intercept: DVector<f64>,
}

impl RidgeModel {
    pub fn predict(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x * &self.weights;
        for mut row in out.row_iter_mut() {
            row += self.intercept.transpose();
        }
        out
    }
}

fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(validation!("{what} contains non-finite values"));
    }
    Ok(())
}

pub(crate) fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(
        m.ncols(),
        m.column_iter().map(|c| c.sum() / m.nrows() as f64),
    )
}

pub(crate) fn subtract_row(m: &mut DMatrix<f64>, row: &DVector<f64>) {
    for mut r in m.row_iter_mut() {
        r -= row.transpose();
    }
}

/// Solves `(XᵀX + λI) W = XᵀY`, on column-centered data when
/// `fit_intercept` is set, by Cholesky factorization of the smaller Gram
/// matrix (primal when p ≤ n, dual otherwise).
pub fn ridge_fit(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    lambda: f64,
    fit_intercept: bool,
) -> Result<RidgeModel> {
    if x.nrows() != y.nrows() {
        return Err(Error::Shape(format!(
            "design has {} rows, targets {}",
            x.nrows(),
            y.nrows()
        )));
    }
    if x.nrows() < 2 {
        return Err(validation!("ridge needs at least 2 rows"));
    }
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(validation!("lambda must be finite and positive, got {lambda}"));
    }
    check_finite(x, "design matrix")?;
    check_finite(y, "target matrix")?;

    let (xc, yc, x_mean, y_mean) = if fit_intercept {
        let (xm, ym) = (column_means(x), column_means(y));
        let (mut xc, mut yc) = (x.clone(), y.clone());
        subtract_row(&mut xc, &xm);
        subtract_row(&mut yc, &ym);
        (xc, yc, xm, ym)
    } else {
        (
            x.clone(),
            y.clone(),
            DVector::zeros(x.ncols()),
            DVector::zeros(y.ncols()),
        )
    };

    let (n, p) = xc.shape();
    let weights = if p <= n {
        let mut gram = xc.tr_mul(&xc);
        for i in 0..p {
            gram[(i, i)] += lambda;
        }
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::DegenerateInput("ridge normal matrix not positive definite".into()))?;
        chol.solve(&xc.tr_mul(&yc))
    } else {
        let mut gram = &xc * xc.transpose();
        for i in 0..n {
            gram[(i, i)] += lambda;
        }
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::DegenerateInput("ridge kernel matrix not positive definite".into()))?;
        xc.tr_mul(&chol.solve(&yc))
    };
    let intercept = if fit_intercept {
        &y_mean - weights.tr_mul(&x_mean)
    } else {
        y_mean
    };
    Ok(RidgeModel { weights, intercept })
}

/// Spectral factorization of a centered design, giving ridge weights for any
/// λ at the cost of one diagonal rescale.
///
/// `W(λ) = basis · diag(1 / (eig + λ)) · proj`, where the eigenpairs come
/// from XᵀX (p ≤ n) or XXᵀ (p > n).
pub(crate) struct RidgePath {
    basis: DMatrix<f64>,
    eigs: Vec<f64>,
    proj: DMatrix<f64>,
}

impl RidgePath {
    pub fn new(xc: &DMatrix<f64>, yc: &DMatrix<f64>) -> Self {
        let (n, p) = xc.shape();
        if p <= n {
            let eig = SymmetricEigen::new(xc.tr_mul(xc));
            let proj = eig.eigenvectors.tr_mul(&xc.tr_mul(yc));
            RidgePath {
                eigs: eig.eigenvalues.iter().map(|v| v.max(0.0)).collect(),
                basis: eig.eigenvectors,
                proj,
            }
        } else {
            let eig = SymmetricEigen::new(xc * xc.transpose());
            let proj = eig.eigenvectors.tr_mul(yc);
            RidgePath {
                eigs: eig.eigenvalues.iter().map(|v| v.max(0.0)).collect(),
                basis: xc.tr_mul(&eig.eigenvectors),
                proj,
            }
        }
    }

    /// Weights with one λ shared by every target column.
    pub fn weights(&self, lambda: f64) -> DMatrix<f64> {
        let mut scaled = self.proj.clone();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row /= self.eigs[i] + lambda;
        }
        &self.basis * scaled
    }

    /// Weights with a separate λ per target column.
    pub fn weights_per_column(&self, lambdas: &[f64]) -> DMatrix<f64> {
        let mut scaled = self.proj.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            for (i, v) in col.iter_mut().enumerate() {
                *v /= self.eigs[i] + lambdas[j];
            }
        }
        &self.basis * scaled
    }
}
