//! Knapp caps: test functions concentrated on a thin slab around the
//! tangent plane at one point of the generating surface.

use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::extension::{dual_exponent, family_ratio, LinearStep, Profile1D, SeparableTestFamily};
use crate::fit::{linear_fit, LinearFit};
use crate::gauge::{sigma_point, Gauge};
use crate::measure::{QuadScheme, Refinement, WeightedConeMeasure};

use super::FamilyError;

/// Centre and width of the height profile g₃((η − centre)/width).
pub const HEIGHT_CENTRE: f64 = 1.5;
pub const HEIGHT_WIDTH: f64 = 0.25;

/// Cap geometry: coordinates z = F·ξ put the base point on the last axis
/// and diagonalise γ''(0) in the tangent axes.
#[derive(Debug, Clone, Serialize)]
pub struct KnappParams {
    pub n: usize,
    pub delta: f64,
    pub base_point: Vec<f64>,
    /// Rows: tangent axes, then the unit base direction.
    pub frame: Vec<Vec<f64>>,
    pub gamma0: f64,
    pub grad_gamma0: Vec<f64>,
    pub hess_gamma0: Vec<Vec<f64>>,
    /// δ per tangent axis: (δ^{3/2}, δ) for n = 3, δ for n = 2.
    pub dilation: Vec<f64>,
    /// G(δ̲) = sup over the unit cube of |Γ(δ̲u)|.
    pub g_sup: f64,
    #[serde(skip)]
    gauge: Arc<Gauge>,
}

fn check_delta(delta: f64) -> Result<(), FamilyError> {
    if !(delta > 0.0 && delta <= 0.25) {
        return Err(FamilyError::BadParameter(format!("delta = {delta} outside (0, 1/4]")));
    }
    Ok(())
}

impl KnappParams {
    /// Cap at the point of Σ in direction `base` (any nonzero vector).
    pub fn new(gauge: Arc<Gauge>, base: &[f64], delta: f64) -> Result<Self, FamilyError> {
        check_delta(delta)?;
        let n = gauge.dim();
        if !(n == 2 || n == 3) || base.len() != n {
            return Err(FamilyError::BadParameter(format!("cap needs n in {{2, 3}}, got {n}")));
        }
        let b = DVector::from_column_slice(base);
        let norm = b.norm();
        if !(norm > 0.0) {
            return Err(FamilyError::BadParameter("zero base direction".into()));
        }
        let e = &b / norm;
        let phi = gauge.value(e.as_slice())?;
        let point = &e / phi;
        // Householder reflection sending e to the last axis.
        let mut last = DVector::zeros(n);
        last[n - 1] = 1.0;
        let v = &e - &last;
        let h = if v.norm() < 1e-14 {
            DMatrix::identity(n, n)
        } else {
            let v = &v / v.norm();
            DMatrix::identity(n, n) - 2.0 * &v * v.transpose()
        };
        let mut frame = h;
        let mut params = Self {
            n,
            delta,
            base_point: point.as_slice().to_vec(),
            frame: vec![],
            gamma0: point.norm(),
            grad_gamma0: vec![],
            hess_gamma0: vec![],
            dilation: vec![],
            g_sup: 0.0,
            gauge,
        };
        params.set_frame(&frame)?;
        if n == 3 {
            // Rotate the tangent axes onto eigenvectors of γ''(0), largest |eigenvalue| first.
            let hm = DMatrix::from_fn(2, 2, |i, j| params.hess_gamma0[i][j]);
            let eig = SymmetricEigen::new(hm);
            let mut order = [0usize, 1];
            order.sort_by(|&a, &b| eig.eigenvalues[b].abs().total_cmp(&eig.eigenvalues[a].abs()));
            let tangent = frame.rows(0, 2).into_owned();
            let mut rotated = frame.clone();
            for (row, &idx) in order.iter().enumerate() {
                let c = eig.eigenvectors.column(idx);
                let new_row = c[0] * tangent.row(0) + c[1] * tangent.row(1);
                rotated.set_row(row, &new_row);
            }
            frame = rotated;
            params.set_frame(&frame)?;
        }
        params.dilation = if n == 2 {
            vec![delta]
        } else {
            vec![delta.powf(1.5), delta]
        };
        params.g_sup = params.sup_gamma()?;
        Ok(params)
    }

    /// Planar cap at the point of Σ with polar angle `theta0`.
    pub fn planar(gauge: Arc<Gauge>, theta0: f64, delta: f64) -> Result<Self, FamilyError> {
        check_delta(delta)?;
        gauge.planar()?;
        let (s, c) = theta0.sin_cos();
        // Frame rows (sin θ₀, −cos θ₀), (cos θ₀, sin θ₀): rotation by π/2 − θ₀.
        let mut params = Self::new(gauge, &[c, s], delta)?;
        let frame = DMatrix::from_row_slice(2, 2, &[s, -c, c, s]);
        params.set_frame(&frame)?;
        params.g_sup = params.sup_gamma()?;
        Ok(params)
    }

    fn set_frame(&mut self, frame: &DMatrix<f64>) -> Result<(), FamilyError> {
        let n = self.n;
        self.frame = (0..n).map(|i| frame.row(i).iter().copied().collect()).collect();
        let jet = self.gauge.jet(&self.base_point)?;
        let grad = &jet.gradient;
        let fr = |i: usize| DVector::from_vec(self.frame[i].clone());
        let dn = grad.dot(&fr(n - 1));
        let gg: Vec<f64> = (0..n - 1).map(|i| -grad.dot(&fr(i)) / dn).collect();
        // Second implicit derivative of φ(Fᵀ(u, γ(u))) = 1.
        let vs: Vec<DVector<f64>> = (0..n - 1).map(|i| fr(i) + gg[i] * fr(n - 1)).collect();
        self.hess_gamma0 = (0..n - 1)
            .map(|i| (0..n - 1).map(|j| -(vs[i].transpose() * &jet.hessian * &vs[j])[(0, 0)] / dn).collect())
            .collect();
        self.grad_gamma0 = gg;
        Ok(())
    }

    fn frame_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.frame[i][j])
    }

    /// γ(u): the height over the tangent coordinates u of the surface point.
    pub fn gamma(&self, u: &[f64]) -> Result<f64, FamilyError> {
        let n = self.n;
        if u.len() != n - 1 {
            return Err(FamilyError::BadParameter("tangent coordinate length".into()));
        }
        let ft = self.frame_matrix().transpose();
        let point = |y: f64| {
            let mut z = DVector::from_column_slice(u).push(y);
            z[n - 1] = y;
            &ft * z
        };
        let axis = ft.column(n - 1).into_owned();
        let linear: f64 = self.grad_gamma0.iter().zip(u).map(|(g, x)| g * x).sum();
        let mut y = self.gamma0 + linear;
        for _ in 0..100 {
            let xi = point(y);
            let jet = self.gauge.jet(xi.as_slice())?;
            let f = jet.value - 1.0;
            let df = jet.gradient.dot(&axis);
            if !(df > 0.0) {
                return Err(FamilyError::Graph(format!("graph fails at u = {u:?}")));
            }
            let step = f / df;
            y -= step;
            if step.abs() <= 1e-15 * y.abs().max(1.0) {
                return Ok(y);
            }
        }
        Err(FamilyError::Graph(format!("Newton stalled at u = {u:?}")))
    }

    /// Γ(u) = γ(u) − γ(0) − u·∇γ(0).
    pub fn big_gamma(&self, u: &[f64]) -> Result<f64, FamilyError> {
        let linear: f64 = self.grad_gamma0.iter().zip(u).map(|(g, x)| g * x).sum();
        Ok(self.gamma(u)? - self.gamma0 - linear)
    }

    /// |Γ| is convex, so its sup over the cube sits at a vertex.
    fn sup_gamma(&self) -> Result<f64, FamilyError> {
        let m = self.n - 1;
        let mut best: f64 = 0.0;
        for mask in 0..(1usize << m) {
            let u: Vec<f64> = (0..m)
                .map(|i| if mask >> i & 1 == 1 { self.dilation[i] } else { -self.dilation[i] })
                .collect();
            best = best.max(self.big_gamma(&u)?.abs());
        }
        Ok(best)
    }

    /// Π δ̲ = δ^{(3n−4)/2}.
    pub fn dilation_volume(&self) -> f64 {
        self.dilation.iter().product()
    }

    /// (δ^{(3n−4)/2}·G)^{1/p'}·Π‖ǧ_i‖_p given the profile norms.
    pub fn predicted_norm(&self, p: f64, profile_norms: &[f64]) -> f64 {
        (self.dilation_volume() * self.g_sup).powf(1.0 / dual_exponent(p)) * profile_norms.iter().product::<f64>()
    }

    /// G^{(n−1)/2} / δ^{(3n−4)/2}, bounded below on every cap.
    pub fn scaling_margin(&self) -> f64 {
        self.g_sup.powf((self.n as f64 - 1.0) / 2.0) / self.dilation_volume()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct KnappCap {
    pub params: KnappParams,
    #[serde(skip)]
    pub family: Arc<SeparableTestFamily>,
    /// Polar-angle interval outside which F̂ is negligible on the cone.
    pub theta_window: (f64, f64),
    pub theta0: f64,
}

impl KnappCap {
    /// Predicted ‖F_δ‖_p with the height profile's own width folded into Π‖ǧ_i‖.
    pub fn predicted_norm(&self, p: f64, tol: f64) -> f64 {
        let pd = dual_exponent(p);
        let norms: Vec<f64> = self
            .family
            .profiles
            .iter()
            .enumerate()
            .map(|(i, prof)| {
                let base = prof
                    .closed_form_norm(p)
                    .unwrap_or_else(|| prof.inverse_transform_norm(p, tol).value);
                if i == 2 {
                    base * HEIGHT_WIDTH.powf(1.0 / pd)
                } else {
                    base
                }
            })
            .collect();
        self.params.predicted_norm(p, &norms)
    }
}

/// Half-width, in units of δ, beyond which the tangential profile is negligible.
fn profile_reach(p: Profile1D) -> f64 {
    match p {
        Profile1D::Gaussian => 6.0,
        Profile1D::Bump | Profile1D::Zero => 1.0,
    }
}

/// F̂(ξ, η) = g₁(z₁/δ)·g₂((z₂ − γ'(0)z₁ − γ(0)η)/G)·g₃((η − 1.5)/w) in the
/// cap frame z = Fξ.
pub fn knapp_cap(gauge: Arc<Gauge>, theta0: f64, delta: f64, profiles: [Profile1D; 3]) -> Result<KnappCap, FamilyError> {
    let params = KnappParams::planar(gauge.clone(), theta0, delta)?;
    if !(params.g_sup > 0.0) {
        return Err(FamilyError::Graph("flat cap: G vanishes".into()));
    }
    let gp = params.grad_gamma0[0];
    let family = SeparableTestFamily::new(
        profiles,
        vec![
            LinearStep::Rotation { angle: FRAC_PI_2 - theta0 },
            LinearStep::Shear {
                matrix: [[1.0, 0.0, 0.0], [-gp, 1.0, -params.gamma0], [0.0, 0.0, 1.0]],
            },
            LinearStep::Scale {
                diag: [1.0 / delta, 1.0 / params.g_sup, 1.0 / HEIGHT_WIDTH],
            },
        ],
        [0.0, 0.0, HEIGHT_CENTRE / HEIGHT_WIDTH],
    )?;
    let reach = profile_reach(profiles[0]) * delta;
    let theta_window = cap_window(&gauge, &params, theta0, reach)?;
    Ok(KnappCap {
        params,
        family: Arc::new(family),
        theta_window,
        theta0,
    })
}

/// Largest interval around θ₀ on which |z₁(P(θ))| ≤ reach.
fn cap_window(g: &Gauge, params: &KnappParams, theta0: f64, reach: f64) -> Result<(f64, f64), FamilyError> {
    let f1 = &params.frame[0];
    let z1 = |th: f64| -> Result<f64, FamilyError> {
        let s = sigma_point(g, th)?;
        Ok(f1[0] * s.point[0] + f1[1] * s.point[1])
    };
    let step = (reach * 0.25).min(0.01);
    let mut edges = [0.0; 2];
    for (slot, dir) in [(0usize, -1.0), (1, 1.0)] {
        let mut inside = theta0;
        let mut outside = theta0;
        for _ in 0..100_000 {
            outside += dir * step;
            if z1(outside)?.abs() > reach || (outside - theta0).abs() >= std::f64::consts::FRAC_PI_2 {
                break;
            }
            inside = outside;
        }
        for _ in 0..60 {
            let mid = 0.5 * (inside + outside);
            if z1(mid)?.abs() > reach {
                outside = mid;
            } else {
                inside = mid;
            }
        }
        edges[slot] = outside;
    }
    Ok((edges[0], edges[1]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KnappRow {
    pub delta: f64,
    pub ratio: f64,
    pub log_ratio: f64,
    pub g_sup: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KnappScan {
    pub p: f64,
    pub q: f64,
    pub rows: Vec<KnappRow>,
    pub fit: LinearFit,
    /// Exponent of G(δ) ∝ δ^k fitted on the same grid.
    pub k_fitted: f64,
    /// 1/q − (k+1)/p' with k the rounded fitted exponent.
    pub predicted_slope: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct KnappScanOptions {
    pub profiles: [Profile1D; 3],
    pub scheme: QuadScheme,
    pub refinement: Refinement,
}

impl Default for KnappScanOptions {
    fn default() -> Self {
        Self {
            profiles: [Profile1D::Gaussian; 3],
            scheme: QuadScheme { radial: 16, angular: 64 },
            refinement: Refinement { tol: 1e-7, max_levels: 6 },
        }
    }
}

pub const MIN_FIT_ROWS: usize = 4;

/// The restriction ratio on each surface-measure cap and its log-log slope in δ.
pub fn knapp_scan(
    gauge: Arc<Gauge>,
    p: f64,
    q: f64,
    deltas: &[f64],
    theta0: f64,
    opts: KnappScanOptions,
) -> Result<KnappScan, FamilyError> {
    if deltas.len() < 5 {
        return Err(FamilyError::BadParameter("delta grid needs >= 5 points".into()));
    }
    let mu = WeightedConeMeasure::surface(gauge.clone());
    let rows: Result<Vec<KnappRow>, FamilyError> = deltas
        .par_iter()
        .map(|&delta| {
            let cap = knapp_cap(gauge.clone(), theta0, delta, opts.profiles)?;
            let r = family_ratio(&cap.family, p, q, &mu, opts.scheme, opts.refinement, Some(cap.theta_window))?;
            Ok(KnappRow {
                delta,
                ratio: r.ratio,
                log_ratio: r.ratio.ln(),
                g_sup: cap.params.g_sup,
                converged: r.converged && r.ratio.is_finite() && r.ratio > 0.0,
            })
        })
        .collect();
    let rows = rows?;
    let good: Vec<&KnappRow> = rows.iter().filter(|r| r.converged).collect();
    if good.len() < MIN_FIT_ROWS {
        return Err(FamilyError::FitRejected(format!("only {} converged rows", good.len())));
    }
    let xs: Vec<f64> = good.iter().map(|r| r.delta.ln()).collect();
    let ys: Vec<f64> = good.iter().map(|r| r.log_ratio).collect();
    let fit = linear_fit(&xs, &ys).ok_or(FamilyError::FitRejected("degenerate delta grid".into()))?;
    let gs: Vec<f64> = good.iter().map(|r| r.g_sup.ln()).collect();
    let k_fitted = linear_fit(&xs, &gs)
        .ok_or(FamilyError::FitRejected("degenerate G fit".into()))?
        .slope;
    let k = k_fitted.round();
    Ok(KnappScan {
        p,
        q,
        rows,
        fit,
        k_fitted,
        predicted_slope: 1.0 / q - (k + 1.0) / dual_exponent(p),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalLine {
    pub p: f64,
    /// (q, fitted slope).
    pub slopes: Vec<(f64, f64)>,
    /// Zero of the fit slope = A/q + B.
    pub q_critical: f64,
    pub k_fitted: f64,
}

/// Locates the q at which the Knapp slope changes sign.
pub fn critical_q(
    gauge: Arc<Gauge>,
    p: f64,
    qs: &[f64],
    deltas: &[f64],
    theta0: f64,
    opts: KnappScanOptions,
) -> Result<CriticalLine, FamilyError> {
    if qs.len() < 2 {
        return Err(FamilyError::BadParameter("need >= 2 q values".into()));
    }
    let scans: Result<Vec<KnappScan>, FamilyError> = qs
        .iter()
        .map(|&q| knapp_scan(gauge.clone(), p, q, deltas, theta0, opts))
        .collect();
    let scans = scans?;
    let xs: Vec<f64> = qs.iter().map(|q| 1.0 / q).collect();
    let ys: Vec<f64> = scans.iter().map(|s| s.fit.slope).collect();
    let line = linear_fit(&xs, &ys).ok_or(FamilyError::FitRejected("degenerate q grid".into()))?;
    Ok(CriticalLine {
        p,
        slopes: qs.iter().copied().zip(ys).collect(),
        q_critical: -line.slope / line.intercept,
        k_fitted: scans.iter().map(|s| s.k_fitted).sum::<f64>() / scans.len() as f64,
    })
}

/// Geometric grid δ = 2^{−hi}, …, 2^{−lo}.
pub fn dyadic_deltas(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).rev().map(|j| (-(j as f64)).exp2()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauge::{make_gauge, GaugeSpec};

    fn gauge(spec: GaugeSpec) -> Arc<Gauge> {
        Arc::new(make_gauge(spec).unwrap())
    }

    #[test]
    fn circle_g_over_delta_squared() {
        let g = gauge(GaugeSpec::circle());
        let mut prev = f64::INFINITY;
        for j in 3..9 {
            let d = (-(j as f64)).exp2();
            let kp = KnappParams::planar(g.clone(), 0.3, d).unwrap();
            let err = (kp.g_sup / (d * d) - 0.5).abs();
            assert!(err < prev);
            prev = err;
            assert!(kp.big_gamma(&[0.0]).unwrap().abs() < 1e-15);
            assert!(kp.grad_gamma0[0].abs() < 1e-14);
        }
        assert!(prev < 1e-4);
        assert!((KnappParams::planar(g, 0.0, 0.1).unwrap().hess_gamma0[0][0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn flat_cap_fourth_order() {
        let g = gauge(GaugeSpec::superellipse(4));
        let kp = KnappParams::planar(g.clone(), 0.0, 0.25).unwrap();
        let gm = |u: f64| kp.gamma(&[u]).unwrap();
        let d4 = |h: f64| (gm(2.0 * h) - 4.0 * gm(h) + 6.0 * gm(0.0) - 4.0 * gm(-h) + gm(-2.0 * h)) / h.powi(4);
        // Richardson step removes the O(h²) error of the stencil.
        let limit = ((4.0 * d4(0.025) - d4(0.05)) / 3.0).abs() / 24.0;
        assert!((limit - 0.25).abs() < 1e-4, "{limit}");
        let errs: Vec<f64> = (2..6)
            .map(|j| {
                let d = (-(j as f64)).exp2();
                (KnappParams::planar(g.clone(), 0.0, d).unwrap().g_sup / d.powi(4) - limit).abs()
            })
            .collect();
        assert!(errs[3] < 3e-3, "{errs:?}");
        // Observed convergence order in δ of at least 1.
        let order = (errs[1] / errs[2]).log2();
        assert!(order >= 1.0, "{errs:?}");
    }

    #[test]
    fn non_normal_base_point_has_tilted_graph() {
        let g = gauge(GaugeSpec::ellipse(2.0, 1.0));
        let kp = KnappParams::planar(g, 0.7, 0.1).unwrap();
        assert!(kp.grad_gamma0[0].abs() > 1e-3);
        assert!(kp.big_gamma(&[0.0]).unwrap().abs() < 1e-14);
        let h = 1e-5;
        let d = (kp.big_gamma(&[h]).unwrap() - kp.big_gamma(&[-h]).unwrap()) / (2.0 * h);
        assert!(d.abs() < 1e-8);
    }

    #[test]
    fn sphere_anisotropic_cap() {
        let g = gauge(GaugeSpec::euclidean(3));
        let kp = KnappParams::new(g, &[0.2, -0.3, 1.0], 0.1).unwrap();
        // Γ(u) = √(1−|u|²) − 1 on the sphere, worst at the corner (δ^{3/2}, δ).
        let r2 = 0.1f64.powi(3) + 0.01;
        assert!((kp.g_sup - (1.0 - (1.0 - r2).sqrt())).abs() < 1e-13);
        assert!((kp.dilation_volume() - 0.1f64.powf(2.5)).abs() < 1e-15);
        assert!(kp.scaling_margin() > 0.0);
    }

    #[test]
    fn predicted_norm_matches_quadrature() {
        let g = gauge(GaugeSpec::circle());
        let cap = knapp_cap(g, 0.4, 0.125, [Profile1D::Gaussian; 3]).unwrap();
        let p = 1.2;
        let direct = cap.family.physical_norm(p, 1e-10).value;
        let predicted = cap.predicted_norm(p, 1e-10);
        assert!((direct - predicted).abs() < 0.02 * direct, "{direct} {predicted}");
        assert!(matches!(knapp_cap(gauge(GaugeSpec::circle()), 0.0, 0.3, [Profile1D::Gaussian; 3]), Err(FamilyError::BadParameter(_))));
    }

    #[test]
    fn cap_family_lives_on_the_cap() {
        let g = gauge(GaugeSpec::circle());
        let cap = knapp_cap(g.clone(), 0.0, 0.0625, [Profile1D::Gaussian; 3]).unwrap();
        // On the cone over the base point: y = (0, 0, 0) at η = 1.5.
        let p = sigma_point(&g, 0.0).unwrap().point;
        let v = cap.family.eval([1.5 * p[0], 1.5 * p[1], 1.5]);
        assert!((v - 1.0).abs() < 1e-12);
        let (lo, hi) = cap.theta_window;
        assert!(lo < 0.0 && hi > 0.0 && hi - lo < 1.0);
    }
}
