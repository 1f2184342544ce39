//! Least-squares fits used by the scan reports.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the fitted line.
    pub rms_residual: f64,
    pub points: usize,
}

/// Ordinary least squares `y ≈ intercept + slope·x`; `None` for fewer than two
/// points or a degenerate abscissa.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= f64::EPSILON * mx.abs().max(1.0) {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    Some(LinearFit {
        slope,
        intercept,
        rms_residual: (ss / n as f64).sqrt(),
        points: n,
    })
}

/// Multi-regressor least squares; rows of `design` are observations.
/// Returns coefficients and the rms residual.
pub fn least_squares(design: &[Vec<f64>], ys: &[f64]) -> Option<(Vec<f64>, f64)> {
    let n = design.len();
    let m = design.first()?.len();
    if n < m {
        return None;
    }
    let a = DMatrix::from_fn(n, m, |i, j| design[i][j]);
    let b = DVector::from_column_slice(ys);
    let svd = a.clone().svd(true, true);
    let coef = svd.solve(&b, 1e-12).ok()?;
    let resid = &a * &coef - &b;
    Some((coef.iter().copied().collect(), (resid.norm_squared() / n as f64).sqrt()))
}
