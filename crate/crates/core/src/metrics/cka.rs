use nalgebra::DMatrix;

use super::ridge::{column_means, subtract_row};
use crate::error::{validation, Error, Result};

/// Linear-kernel centered kernel alignment between two representations of
/// the same `n` stimuli (rows). Not debiased.
pub fn cka(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
    if x.nrows() != y.nrows() {
        return Err(Error::Shape(format!(
            "cka needs matching rows, got {} and {}",
            x.nrows(),
            y.nrows()
        )));
    }
    if x.nrows() < 3 {
        return Err(validation!("cka needs at least 3 stimuli"));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(validation!("cka inputs must be finite"));
    }
    let center = |m: &DMatrix<f64>| {
        let mut c = m.clone();
        subtract_row(&mut c, &column_means(m));
        c
    };
    let (xc, yc) = (center(x), center(y));
    // ‖YᵀX‖²_F / (‖XᵀX‖_F ‖YᵀY‖_F); the 1/(n-1)² HSIC factors cancel
    let cross = yc.tr_mul(&xc).norm_squared();
    let self_x = xc.tr_mul(&xc).norm();
    let self_y = yc.tr_mul(&yc).norm();
    if self_x == 0.0 || self_y == 0.0 {
        return Err(Error::DegenerateInput("cka input is zero after centering".into()));
    }
    Ok((cross / (self_x * self_y)).clamp(0.0, 1.0))
}
