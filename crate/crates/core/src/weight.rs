//! The affine weight w = ⟨M∇φ, ∇φ⟩φ with M = ±adj(Hess φ), and the identities
//! tying it to curvature.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gauge::{sigma_point, Gauge, GaugeError, GaugeSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WeightError {
    #[error(transparent)]
    Gauge(#[from] GaugeError),
    #[error("transformation is too close to singular (|det| = {0:e} < 1e-6)")]
    NearSingular(f64),
    #[error("point is not on the unit level set (phi = {0})")]
    OffSurface(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum WeightConvention {
    #[default]
    PositiveAdjugate,
    NegativeAdjugate,
}

impl WeightConvention {
    pub fn sign(self) -> f64 {
        match self {
            WeightConvention::PositiveAdjugate => 1.0,
            WeightConvention::NegativeAdjugate => -1.0,
        }
    }
}

/// Classical adjugate (transpose of the cofactor matrix).
pub fn adjugate(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "adjugate of a non-square matrix");
    if n == 1 {
        return DMatrix::from_element(1, 1, 1.0);
    }
    DMatrix::from_fn(n, n, |i, j| {
        // adj[i][j] = (-1)^{i+j} det(m without row j, column i)
        let minor = m.clone().remove_row(j).remove_column(i);
        let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
        sign * minor.determinant()
    })
}

pub fn adjugate2(m: &Matrix2<f64>) -> Matrix2<f64> {
    Matrix2::new(m[(1, 1)], -m[(0, 1)], -m[(1, 0)], m[(0, 0)])
}

pub fn weight_matrix(g: &Gauge, xi: &[f64], conv: WeightConvention) -> Result<DMatrix<f64>, WeightError> {
    let jet = g.jet(xi)?;
    Ok(adjugate(&jet.hessian) * conv.sign())
}

pub fn weight(g: &Gauge, xi: &[f64], conv: WeightConvention) -> Result<f64, WeightError> {
    if g.dim() == 2 {
        return weight2(g, Vector2::new(xi[0], xi[1]), conv);
    }
    let jet = g.jet(xi)?;
    let m = adjugate(&jet.hessian) * conv.sign();
    Ok((&m * &jet.gradient).dot(&jet.gradient) * jet.value)
}

/// Planar fast path of [`weight`].
pub fn weight2(g: &Gauge, xi: Vector2<f64>, conv: WeightConvention) -> Result<f64, WeightError> {
    let jet = g.jet2(xi)?;
    Ok(weight_from_jet2(jet.value, &jet.gradient, &jet.hessian, conv))
}

pub fn weight_from_jet2(value: f64, grad: &Vector2<f64>, hess: &Matrix2<f64>, conv: WeightConvention) -> f64 {
    let m = adjugate2(hess) * conv.sign();
    (m * grad).dot(grad) * value
}

const RESIDUAL_FLOOR: f64 = 1e-12;

/// Relative gap between the parametric curvature of Σ at angle θ and
/// w/|∇φ|³ at the same point.
pub fn curvature_identity_residual(g: &Gauge, theta: f64, conv: WeightConvention) -> Result<f64, WeightError> {
    let sample = sigma_point(g, theta)?;
    let jet = g.jet2(sample.point_vec())?;
    let w = weight_from_jet2(jet.value, &jet.gradient, &jet.hessian, conv);
    let predicted = w / jet.gradient.norm().powi(3);
    Ok((sample.curvature - predicted).abs() / sample.curvature.max(RESIDUAL_FLOOR))
}

/// Gauss–Kronecker curvature of the level set {φ = 1} at `point`, from a local
/// graph over the tangent hyperplane: Σ ∋ p + Vv + h(v)ν with ν the outward
/// unit normal. The Hessian of h comes from Richardson-extrapolated central
/// differences of Newton-solved heights.
pub fn graph_gaussian_curvature(g: &Gauge, point: &[f64]) -> Result<f64, WeightError> {
    let n = g.dim();
    let jet = g.jet(point)?;
    if (jet.value - 1.0).abs() > 1e-10 {
        return Err(WeightError::OffSurface(jet.value));
    }
    let p = DVector::from_column_slice(point);
    let nu = &jet.gradient / jet.gradient.norm();
    // Orthonormal tangent frame: Gram–Schmidt on the coordinate axes.
    let mut frame: Vec<DVector<f64>> = Vec::new();
    for axis in 0..n {
        let mut e = DVector::zeros(n);
        e[axis] = 1.0;
        e -= &nu * nu.dot(&e);
        for f in &frame {
            e -= f * f.dot(&e);
        }
        if e.norm() > 1e-6 && frame.len() < n - 1 {
            frame.push(e.normalize());
        }
    }
    let height = |v: &[f64]| -> Result<f64, WeightError> {
        let mut base = p.clone();
        for (vi, e) in v.iter().zip(&frame) {
            base += e * *vi;
        }
        let mut h = 0.0;
        for _ in 0..60 {
            let q = &base + &nu * h;
            let j = g.jet(q.as_slice())?;
            let step = (j.value - 1.0) / j.gradient.dot(&nu);
            h -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        Ok(h)
    };
    let m = n - 1;
    let hessian_at = |step: f64| -> Result<DMatrix<f64>, WeightError> {
        let h0 = height(&vec![0.0; m])?;
        let mut hess = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let value = if i == j {
                    let mut a = vec![0.0; m];
                    a[i] = step;
                    let fp = height(&a)?;
                    a[i] = -step;
                    let fm = height(&a)?;
                    (fp - 2.0 * h0 + fm) / (step * step)
                } else {
                    let mut acc = 0.0;
                    for (si, sj, sign) in [(1.0, 1.0, 1.0), (1.0, -1.0, -1.0), (-1.0, 1.0, -1.0), (-1.0, -1.0, 1.0)] {
                        let mut a = vec![0.0; m];
                        a[i] = si * step;
                        a[j] = sj * step;
                        acc += sign * height(&a)?;
                    }
                    acc / (4.0 * step * step)
                };
                hess[(i, j)] = value;
                hess[(j, i)] = value;
            }
        }
        Ok(hess)
    };
    let coarse = hessian_at(2e-3)?;
    let fine = hessian_at(1e-3)?;
    let extrapolated = (&fine * 4.0 - coarse) / 3.0;
    Ok((-extrapolated).determinant())
}

/// n-dimensional identity κ = w/|∇φ|^{n+1} at a point of Σ, with κ from
/// [`graph_gaussian_curvature`].
pub fn curvature_identity_residual_nd(g: &Gauge, point: &[f64], conv: WeightConvention) -> Result<f64, WeightError> {
    let kappa = graph_gaussian_curvature(g, point)?;
    let jet = g.jet(point)?;
    let w = weight(g, point, conv)?;
    let predicted = w / jet.gradient.norm().powi(g.dim() as i32 + 1);
    Ok((kappa - predicted).abs() / kappa.max(RESIDUAL_FLOOR))
}

/// Builds φ∘X from scratch and compares w_{φ∘X}(ξ) with det(X)²·w_φ(Xξ).
pub fn affine_covariance_residual(
    g: &Gauge,
    x: &DMatrix<f64>,
    xi: &[f64],
    conv: WeightConvention,
) -> Result<f64, WeightError> {
    let det = x.determinant();
    if !(det.abs() >= 1e-6) {
        return Err(WeightError::NearSingular(det));
    }
    let rows: Vec<Vec<f64>> = (0..x.nrows()).map(|i| x.row(i).iter().copied().collect()).collect();
    let composed = Gauge::new(GaugeSpec::linear_image(g.spec().clone(), rows))?;
    let lhs = weight(&composed, xi, conv)?;
    let image = x * DVector::from_column_slice(xi);
    let rhs = det * det * weight(g, image.as_slice(), conv)?;
    Ok((lhs - rhs).abs() / rhs.abs().max(RESIDUAL_FLOOR))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauge::make_gauge;
    use std::f64::consts::PI;

    const POS: WeightConvention = WeightConvention::PositiveAdjugate;

    /// Weight from a central finite-difference Hessian of φ alone.
    fn fd_weight(g: &Gauge, xi: [f64; 2]) -> f64 {
        let h = 1e-4;
        let f = |a: f64, b: f64| g.value(&[xi[0] + a, xi[1] + b]).unwrap();
        let gx = (f(h, 0.0) - f(-h, 0.0)) / (2.0 * h);
        let gy = (f(0.0, h) - f(0.0, -h)) / (2.0 * h);
        let hxx = (f(h, 0.0) - 2.0 * f(0.0, 0.0) + f(-h, 0.0)) / (h * h);
        let hyy = (f(0.0, h) - 2.0 * f(0.0, 0.0) + f(0.0, -h)) / (h * h);
        let hxy = (f(h, h) - f(h, -h) - f(-h, h) + f(-h, -h)) / (4.0 * h * h);
        (hyy * gx * gx - 2.0 * hxy * gx * gy + hxx * gy * gy) * f(0.0, 0.0)
    }

    #[test]
    fn adjugate_small_cases() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(adjugate(&m), DMatrix::from_row_slice(2, 2, &[4.0, -2.0, -3.0, 1.0]));
        let m3 = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 1.0, 1.0, 3.0, 0.0, 0.0, 1.0, 4.0]);
        let prod = &m3 * adjugate(&m3);
        let det = m3.determinant();
        assert!((prod - DMatrix::identity(3, 3) * det).norm() < 1e-12);
    }

    #[test]
    fn circle_weight_matrix_conventions() {
        let g = make_gauge(GaugeSpec::circle()).unwrap();
        let pos = weight_matrix(&g, &[1.0, 0.0], POS).unwrap();
        assert_eq!(pos, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        let neg = weight_matrix(&g, &[1.0, 0.0], WeightConvention::NegativeAdjugate).unwrap();
        assert_eq!(neg, DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn superellipse_matrix_matches_fd_adjugate() {
        let g = make_gauge(GaugeSpec::superellipse(4)).unwrap();
        let m = weight_matrix(&g, &[1.0, 1.0], POS).unwrap();
        let h = 1e-4;
        let f = |a: f64, b: f64| g.value(&[1.0 + a, 1.0 + b]).unwrap();
        let hxx = (f(h, 0.0) - 2.0 * f(0.0, 0.0) + f(-h, 0.0)) / (h * h);
        let hyy = (f(0.0, h) - 2.0 * f(0.0, 0.0) + f(0.0, -h)) / (h * h);
        let hxy = (f(h, h) - f(h, -h) - f(-h, h) + f(-h, -h)) / (4.0 * h * h);
        let fd = DMatrix::from_row_slice(2, 2, &[hyy, -hxy, -hxy, hxx]);
        assert!((&m - &fd).norm() <= 1e-6 * m.norm());
    }

    #[test]
    fn weight_examples() {
        let c = make_gauge(GaugeSpec::circle()).unwrap();
        for xi in [[1.0, 0.0], [0.3, -2.0], [1e-3, 1e-3]] {
            assert!((weight(&c, &xi, POS).unwrap() - 1.0).abs() < 1e-12);
        }
        let s = make_gauge(GaugeSpec::superellipse(4)).unwrap();
        assert_eq!(weight(&s, &[1.0, 0.0], POS).unwrap(), 0.0);
        let e = make_gauge(GaugeSpec::ellipse(2.0, 1.0)).unwrap();
        for xi in [[1.0, 1.0], [-0.2, 3.0]] {
            let w = weight(&e, &xi, POS).unwrap();
            assert!((w - 0.25).abs() < 1e-12);
            assert!((fd_weight(&e, xi) - 0.25).abs() < 1e-6);
        }
    }

    #[test]
    fn curvature_identity_examples() {
        let c = make_gauge(GaugeSpec::circle()).unwrap();
        for i in 0..8 {
            assert!(curvature_identity_residual(&c, 0.7 * i as f64, POS).unwrap() <= 1e-10);
        }
        let s4 = make_gauge(GaugeSpec::superellipse(4)).unwrap();
        assert!(curvature_identity_residual(&s4, PI / 4.0, POS).unwrap() <= 1e-6);
        let s6 = make_gauge(GaugeSpec::superellipse(6)).unwrap();
        assert_eq!(curvature_identity_residual(&s6, 0.0, POS).unwrap(), 0.0);
    }

    #[test]
    fn sphere_and_ellipsoid_identity() {
        let sphere = make_gauge(GaugeSpec::euclidean(3)).unwrap();
        let p = [0.48, -0.6, 0.64];
        assert!((graph_gaussian_curvature(&sphere, &p).unwrap() - 1.0).abs() < 1e-8);
        assert!(curvature_identity_residual_nd(&sphere, &p, POS).unwrap() < 1e-8);

        let (a, b, c) = (1.5, 1.0, 0.7);
        let spec = GaugeSpec::linear_image(
            GaugeSpec::euclidean(3),
            vec![vec![1.0 / a, 0.0, 0.0], vec![0.0, 1.0 / b, 0.0], vec![0.0, 0.0, 1.0 / c]],
        );
        let ell = make_gauge(spec).unwrap();
        let dir = [0.3, 0.5, -0.8];
        let phi = ell.value(&dir).unwrap();
        let x: Vec<f64> = dir.iter().map(|d| d / phi).collect();
        let s: f64 = x[0] * x[0] / a.powi(4) + x[1] * x[1] / b.powi(4) + x[2] * x[2] / c.powi(4);
        let exact = 1.0 / ((a * b * c).powi(2) * s.powi(2));
        assert!((graph_gaussian_curvature(&ell, &x).unwrap() - exact).abs() < 1e-7 * exact);
        assert!(curvature_identity_residual_nd(&ell, &x, POS).unwrap() < 1e-6);
    }

    #[test]
    fn four_dimensional_sphere_identity() {
        let g = make_gauge(GaugeSpec::euclidean(4)).unwrap();
        let p = [0.5, 0.5, 0.5, 0.5];
        assert!(curvature_identity_residual_nd(&g, &p, POS).unwrap() < 1e-6);
    }

    #[test]
    fn covariance_examples() {
        let c = make_gauge(GaugeSpec::circle()).unwrap();
        let id = DMatrix::identity(2, 2);
        assert_eq!(affine_covariance_residual(&c, &id, &[0.3, 0.9], POS).unwrap(), 0.0);
        let x = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 1.0]);
        assert!(affine_covariance_residual(&c, &x, &[1.0, 1.0], POS).unwrap() <= 1e-8);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0 + 1e-9]);
        assert!(matches!(
            affine_covariance_residual(&c, &bad, &[1.0, 1.0], POS),
            Err(WeightError::NearSingular(_))
        ));
    }

    #[test]
    fn covariance_in_three_dimensions() {
        let g = make_gauge(GaugeSpec::euclidean(3)).unwrap();
        let x = DMatrix::from_row_slice(3, 3, &[1.0, 0.4, 0.0, -0.3, 2.0, 0.1, 0.2, 0.0, 0.7]);
        assert!(affine_covariance_residual(&g, &x, &[0.2, -1.0, 0.5], POS).unwrap() < 1e-10);
    }
}
