use crate::error::{Error, Result};
use crate::stats::{average_ranks, mean};

/// True when `values` has no spread beyond rounding noise.
pub(crate) fn is_constant(values: &[f64]) -> bool {
    let m = mean(values);
    let scale = values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    ss == 0.0 || ss <= (values.len() as f64) * (scale * 1e-14).powi(2)
}

/// Pearson correlation of two equal-length samples.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!(
            "pearson needs equal lengths, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::DegenerateInput(format!(
            "pearson needs at least 3 points, got {}",
            x.len()
        )));
    }
    if is_constant(x) || is_constant(y) {
        return Err(Error::DegenerateInput("zero variance input".into()));
    }
    Ok(pearson_unchecked(x, y))
}

/// Pearson without precondition checks; callers guarantee non-constant input.
pub(crate) fn pearson_unchecked(x: &[f64], y: &[f64]) -> f64 {
    let mx = mean(x);
    let my = mean(y);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Spearman rank correlation: Pearson of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!(
            "spearman needs equal lengths, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::DegenerateInput(format!(
            "spearman needs at least 3 points, got {}",
            x.len()
        )));
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    if is_constant(&rx) || is_constant(&ry) {
        return Err(Error::DegenerateInput("all-equal input".into()));
    }
    Ok(pearson_unchecked(&rx, &ry))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_examples() {
        assert_eq!(pearson(&[1., 2., 3.], &[1., 2., 3.]).unwrap(), 1.0);
        assert_eq!(pearson(&[1., 2., 3.], &[3., 2., 1.]).unwrap(), -1.0);
        // covariance 4, variances 5 and 5
        assert_eq!(pearson(&[1., 2., 3., 4.], &[1., 3., 2., 4.]).unwrap(), 0.8);
    }

    #[test]
    fn pearson_degenerate() {
        assert!(matches!(
            pearson(&[1., 1., 1.], &[1., 2., 3.]),
            Err(Error::DegenerateInput(_))
        ));
        assert!(matches!(pearson(&[1., 2.], &[1., 2.]), Err(Error::DegenerateInput(_))));
        assert!(matches!(pearson(&[1., 2., 3.], &[1., 2.]), Err(Error::Shape(_))));
    }

    #[test]
    fn pearson_affine_invariance() {
        let x = [0.3, -1.2, 2.5, 0.7, 1.1];
        let y = [1.0, 0.2, 2.0, 0.9, 0.4];
        let y2: Vec<f64> = y.iter().map(|v| 3.5 * v - 7.0).collect();
        let r = pearson(&x, &y).unwrap();
        assert!((r - pearson(&x, &y2).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1., 2., 3.], &[10., 20., 30.]).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&[1., 2., 3.], &[9., 4., 1.]).unwrap() + 1.0).abs() < 1e-15);
        let tied = spearman(&[1., 2., 2., 4.], &[1., 2., 3., 4.]).unwrap();
        let oracle = pearson(&[1., 2.5, 2.5, 4.], &[1., 2., 3., 4.]).unwrap();
        assert!((tied - oracle).abs() < 1e-15);
        assert!(matches!(
            spearman(&[2., 2., 2.], &[1., 2., 3.]),
            Err(Error::DegenerateInput(_))
        ));
    }
}
