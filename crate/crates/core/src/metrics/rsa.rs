use nalgebra::DMatrix;

use super::correlation::{is_constant, spearman};
use crate::error::{validation, Error, Result};
use crate::stats::order_free_sum;

/// Representational dissimilarity matrix with correlation distance.
#[derive(Debug, Clone, PartialEq)]
pub struct Rdm {
    matrix: DMatrix<f64>,
    stimulus_ids: Vec<String>,
}

impl Rdm {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn stimulus_ids(&self) -> &[String] {
        &self.stimulus_ids
    }

    /// Strict upper triangle, row-major.
    pub fn upper_triangle(&self) -> Vec<f64> {
        let m = self.matrix.nrows();
        let mut out = Vec::with_capacity(m * (m - 1) / 2);
        for i in 0..m {
            for j in i + 1..m {
                out.push(self.matrix[(i, j)]);
            }
        }
        out
    }
}

/// Pearson between two rows, with sums taken in sorted order so that the
/// result does not depend on the order of the response dimensions.
fn row_correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = order_free_sum(&mut a.to_vec()) / n;
    let mb = order_free_sum(&mut b.to_vec()) / n;
    let mut xy: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).collect();
    let mut xx: Vec<f64> = a.iter().map(|x| (x - ma) * (x - ma)).collect();
    let mut yy: Vec<f64> = b.iter().map(|y| (y - mb) * (y - mb)).collect();
    let sxy = order_free_sum(&mut xy);
    let sxx = order_free_sum(&mut xx);
    let syy = order_free_sum(&mut yy);
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Builds the RDM `1 − Pearson(row_i, row_j)` of an n × d response matrix.
pub fn rdm_compute(resp: &DMatrix<f64>, stimulus_ids: &[String]) -> Result<Rdm> {
    let n = resp.nrows();
    if n < 3 {
        return Err(validation!("an RDM needs at least 3 stimuli"));
    }
    if stimulus_ids.len() != n {
        return Err(Error::Shape(format!(
            "{} stimulus ids for {n} response rows",
            stimulus_ids.len()
        )));
    }
    if resp.iter().any(|v| !v.is_finite()) {
        return Err(validation!("responses must be finite"));
    }
    let rows: Vec<Vec<f64>> = resp.row_iter().map(|r| r.iter().copied().collect()).collect();
    let constant: Vec<&str> = rows
        .iter()
        .zip(stimulus_ids)
        .filter(|(r, _)| r.len() < 2 || is_constant(r))
        .map(|(_, id)| id.as_str())
        .collect();
    if !constant.is_empty() {
        return Err(Error::DegenerateInput(format!(
            "constant response rows: {}",
            constant.join(", ")
        )));
    }
    let mut matrix = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let d = (1.0 - row_correlation(&rows[i], &rows[j])).clamp(0.0, 2.0);
            matrix[(i, j)] = d;
            matrix[(j, i)] = d;
        }
    }
    Ok(Rdm {
        matrix,
        stimulus_ids: stimulus_ids.to_vec(),
    })
}

/// Spearman correlation between the strict upper triangles of two RDMs.
pub fn rsa_score(model_rdm: &Rdm, brain_rdm: &Rdm) -> Result<f64> {
    if model_rdm.stimulus_ids != brain_rdm.stimulus_ids {
        return Err(validation!("RDMs cover different stimuli or orders"));
    }
    spearman(&model_rdm.upper_triangle(), &brain_rdm.upper_triangle())
}
