//! Convex gauges (Minkowski functionals) and the curve Σ = {φ = 1}.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GaugeError {
    #[error("linear image matrix is singular (|det| = {0:e})")]
    Singular(f64),
    #[error("linear image matrix must be square {expected}x{expected}")]
    MatrixShape { expected: usize },
    #[error("superellipse exponent must be an even integer >= 2, got {0}")]
    BadExponent(u32),
    #[error("circle dimension must be in 1..=4, got {0}")]
    BadDimension(usize),
    #[error("radial series is empty")]
    EmptySeries,
    #[error("radial profile not positive at theta = {theta}: r = {r:e}")]
    RadialNotPositive { theta: f64, r: f64 },
    #[error("radial profile not convex at theta = {theta}: r^2 + 2r'^2 - r r'' = {numerator:e}")]
    RadialNotConvex { theta: f64, numerator: f64 },
    #[error("point too close to the origin (|xi| = {0:e})")]
    NearOrigin(f64),
    #[error("expected a point of dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("operation needs a planar gauge, this one has dimension {0}")]
    NotPlanar(usize),
}

fn two() -> usize {
    2
}

/// Serialized as `{"kind": ..., "params": {...}, "label": ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "kebab-case")]
pub enum GaugeKind {
    Circle {
        #[serde(default = "two")]
        dim: usize,
    },
    LinearImage {
        base: Box<GaugeSpec>,
        /// Row-major square matrix X; the gauge is ξ ↦ φ_base(Xξ).
        matrix: Vec<Vec<f64>>,
    },
    Superellipse {
        k: u32,
    },
    /// r(θ) = Σ_j cos[j]·cos(jθ) + sin[j]·sin(jθ); `sin[0]` is ignored.
    Radial {
        cos: Vec<f64>,
        #[serde(default)]
        sin: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaugeSpec {
    #[serde(flatten)]
    pub kind: GaugeKind,
    #[serde(default)]
    pub label: String,
}

impl GaugeSpec {
    pub fn circle() -> Self {
        Self::labelled(GaugeKind::Circle { dim: 2 }, "circle")
    }

    pub fn euclidean(dim: usize) -> Self {
        Self::labelled(GaugeKind::Circle { dim }, &format!("euclidean-{dim}"))
    }

    pub fn superellipse(k: u32) -> Self {
        Self::labelled(GaugeKind::Superellipse { k }, &format!("superellipse-{k}"))
    }

    pub fn linear_image(base: GaugeSpec, matrix: Vec<Vec<f64>>) -> Self {
        let label = format!("{}-linear", base.label);
        Self::labelled(
            GaugeKind::LinearImage {
                base: Box::new(base),
                matrix,
            },
            &label,
        )
    }

    /// The ellipse ξ₁²/a² + ξ₂²/b² = 1.
    pub fn ellipse(a: f64, b: f64) -> Self {
        let mut s = Self::linear_image(Self::circle(), vec![vec![1.0 / a, 0.0], vec![0.0, 1.0 / b]]);
        s.label = format!("ellipse-{a}-{b}");
        s
    }

    pub fn radial(cos: Vec<f64>, sin: Vec<f64>) -> Self {
        Self::labelled(GaugeKind::Radial { cos, sin }, "radial")
    }

    fn labelled(kind: GaugeKind, label: &str) -> Self {
        Self {
            kind,
            label: label.to_string(),
        }
    }
}

/// Value, gradient and Hessian of a planar gauge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet2 {
    pub value: f64,
    pub gradient: Vector2<f64>,
    pub hessian: Matrix2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

impl From<Jet2> for Jet {
    fn from(j: Jet2) -> Self {
        Jet {
            value: j.value,
            gradient: DVector::from_column_slice(j.gradient.as_slice()),
            hessian: DMatrix::from_column_slice(2, 2, j.hessian.as_slice()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct RadialSeries {
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl RadialSeries {
    /// (r, r', r'') at θ.
    fn eval(&self, theta: f64) -> (f64, f64, f64) {
        let (mut r, mut d1, mut d2) = (0.0, 0.0, 0.0);
        let len = self.cos.len().max(self.sin.len());
        for j in 0..len {
            let a = self.cos.get(j).copied().unwrap_or(0.0);
            let b = if j == 0 { 0.0 } else { self.sin.get(j).copied().unwrap_or(0.0) };
            let jf = j as f64;
            let (s, c) = (jf * theta).sin_cos();
            r += a * c + b * s;
            d1 += jf * (b * c - a * s);
            d2 -= jf * jf * (a * c + b * s);
        }
        (r, d1, d2)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Form {
    Circle { dim: usize },
    Linear { base: Box<Form>, x: DMatrix<f64> },
    Superellipse { k: i32 },
    Radial(RadialSeries),
}

pub const RADIAL_AUDIT_POINTS: usize = 4096;

impl Form {
    fn build(spec: &GaugeSpec) -> Result<(Form, usize), GaugeError> {
        match &spec.kind {
            GaugeKind::Circle { dim } => {
                if !(1..=4).contains(dim) {
                    return Err(GaugeError::BadDimension(*dim));
                }
                Ok((Form::Circle { dim: *dim }, *dim))
            }
            GaugeKind::LinearImage { base, matrix } => {
                let (base, dim) = Form::build(base)?;
                if matrix.len() != dim || matrix.iter().any(|row| row.len() != dim) {
                    return Err(GaugeError::MatrixShape { expected: dim });
                }
                let x = DMatrix::from_fn(dim, dim, |i, j| matrix[i][j]);
                let det = x.determinant();
                if !(det.abs() > 1e-12) {
                    return Err(GaugeError::Singular(det));
                }
                Ok((
                    Form::Linear {
                        base: Box::new(base),
                        x,
                    },
                    dim,
                ))
            }
            GaugeKind::Superellipse { k } => {
                if *k < 2 || k % 2 != 0 {
                    return Err(GaugeError::BadExponent(*k));
                }
                Ok((Form::Superellipse { k: *k as i32 }, 2))
            }
            GaugeKind::Radial { cos, sin } => {
                if cos.is_empty() {
                    return Err(GaugeError::EmptySeries);
                }
                let series = RadialSeries {
                    cos: cos.clone(),
                    sin: sin.clone(),
                };
                for i in 0..RADIAL_AUDIT_POINTS {
                    let theta = TAU * i as f64 / RADIAL_AUDIT_POINTS as f64;
                    let (r, d1, d2) = series.eval(theta);
                    if !(r > 0.0) {
                        return Err(GaugeError::RadialNotPositive { theta, r });
                    }
                    let numerator = r * r + 2.0 * d1 * d1 - r * d2;
                    if numerator < -1e-12 {
                        return Err(GaugeError::RadialNotConvex { theta, numerator });
                    }
                }
                Ok((Form::Radial(series), 2))
            }
        }
    }

    fn value_nd(&self, xi: &DVector<f64>) -> f64 {
        match self {
            Form::Circle { .. } => xi.norm(),
            Form::Linear { base, x } => base.value_nd(&(x * xi)),
            Form::Superellipse { .. } | Form::Radial(_) => self.value2(Vector2::new(xi[0], xi[1])),
        }
    }

    fn value2(&self, xi: Vector2<f64>) -> f64 {
        match self {
            Form::Circle { .. } => xi.norm(),
            Form::Linear { base, x } => {
                let y = Vector2::new(x[(0, 0)] * xi[0] + x[(0, 1)] * xi[1], x[(1, 0)] * xi[0] + x[(1, 1)] * xi[1]);
                base.value2(y)
            }
            Form::Superellipse { k } => {
                let m = xi[0].abs().max(xi[1].abs());
                let (a, b) = (xi[0] / m, xi[1] / m);
                m * (a.powi(*k) + b.powi(*k)).powf(1.0 / *k as f64)
            }
            Form::Radial(series) => xi.norm() / series.eval(xi[1].atan2(xi[0])).0,
        }
    }

    fn jet2(&self, xi: Vector2<f64>) -> Jet2 {
        match self {
            Form::Circle { .. } => {
                let rho = xi.norm();
                let e = xi / rho;
                Jet2 {
                    value: rho,
                    gradient: e,
                    hessian: (Matrix2::identity() - e * e.transpose()) / rho,
                }
            }
            Form::Linear { base, x } => {
                let x2 = Matrix2::new(x[(0, 0)], x[(0, 1)], x[(1, 0)], x[(1, 1)]);
                let inner = base.jet2(x2 * xi);
                Jet2 {
                    value: inner.value,
                    gradient: x2.transpose() * inner.gradient,
                    hessian: x2.transpose() * inner.hessian * x2,
                }
            }
            Form::Superellipse { k } => {
                // Scale by the max-norm first so powers cannot overflow or underflow.
                let m = xi[0].abs().max(xi[1].abs());
                let y = xi / m;
                let kf = *k as f64;
                let py = (y[0].powi(*k) + y[1].powi(*k)).powf(1.0 / kf);
                let z = y / py;
                let g = Vector2::new(z[0].powi(k - 1), z[1].powi(k - 1));
                let d = Vector2::new(z[0].powi(k - 2), z[1].powi(k - 2));
                let h = (Matrix2::from_diagonal(&d) - g * g.transpose()) * ((kf - 1.0) / (py * m));
                Jet2 {
                    value: m * py,
                    gradient: g,
                    hessian: h,
                }
            }
            Form::Radial(series) => {
                let rho = xi.norm();
                let theta = xi[1].atan2(xi[0]);
                let (r, d1, d2) = series.eval(theta);
                let (s, c) = theta.sin_cos();
                let e_rho = Vector2::new(c, s);
                let e_theta = Vector2::new(-s, c);
                let curv = (r * r + 2.0 * d1 * d1 - r * d2) / (r * r * r);
                Jet2 {
                    value: rho / r,
                    gradient: e_rho / r - e_theta * (d1 / (r * r)),
                    hessian: e_theta * e_theta.transpose() * (curv / rho),
                }
            }
        }
    }

    fn jet_nd(&self, xi: &DVector<f64>) -> Jet {
        match self {
            Form::Circle { dim } => {
                let rho = xi.norm();
                let e = xi / rho;
                Jet {
                    value: rho,
                    hessian: (DMatrix::identity(*dim, *dim) - &e * e.transpose()) / rho,
                    gradient: e,
                }
            }
            Form::Linear { base, x } => {
                let inner = base.jet_nd(&(x * xi));
                Jet {
                    value: inner.value,
                    gradient: x.transpose() * inner.gradient,
                    hessian: x.transpose() * inner.hessian * x,
                }
            }
            Form::Superellipse { .. } | Form::Radial(_) => self.jet2(Vector2::new(xi[0], xi[1])).into(),
        }
    }
}

/// An immutable gauge φ built from a validated [`GaugeSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gauge {
    spec: GaugeSpec,
    dim: usize,
    form: Form,
}

pub const MIN_NORM: f64 = 1e-8;

impl Gauge {
    pub fn new(spec: GaugeSpec) -> Result<Self, GaugeError> {
        let (form, dim) = Form::build(&spec)?;
        Ok(Self { spec, dim, form })
    }

    pub fn spec(&self) -> &GaugeSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.spec.label
    }

    fn check(&self, xi: &[f64]) -> Result<(), GaugeError> {
        if xi.len() != self.dim {
            return Err(GaugeError::DimensionMismatch {
                expected: self.dim,
                got: xi.len(),
            });
        }
        let norm = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm >= MIN_NORM) {
            return Err(GaugeError::NearOrigin(norm));
        }
        Ok(())
    }

    pub fn value(&self, xi: &[f64]) -> Result<f64, GaugeError> {
        self.check(xi)?;
        Ok(if self.dim == 2 {
            self.form.value2(Vector2::new(xi[0], xi[1]))
        } else {
            self.form.value_nd(&DVector::from_column_slice(xi))
        })
    }

    pub fn jet(&self, xi: &[f64]) -> Result<Jet, GaugeError> {
        self.check(xi)?;
        Ok(if self.dim == 2 {
            self.form.jet2(Vector2::new(xi[0], xi[1])).into()
        } else {
            self.form.jet_nd(&DVector::from_column_slice(xi))
        })
    }

    pub fn value2(&self, xi: Vector2<f64>) -> Result<f64, GaugeError> {
        self.planar()?;
        self.check(xi.as_slice())?;
        Ok(self.form.value2(xi))
    }

    pub fn jet2(&self, xi: Vector2<f64>) -> Result<Jet2, GaugeError> {
        self.planar()?;
        self.check(xi.as_slice())?;
        Ok(self.form.jet2(xi))
    }

    pub fn planar(&self) -> Result<(), GaugeError> {
        if self.dim == 2 {
            Ok(())
        } else {
            Err(GaugeError::NotPlanar(self.dim))
        }
    }

    fn radial_series(&self) -> Option<&RadialSeries> {
        match &self.form {
            Form::Radial(s) => Some(s),
            _ => None,
        }
    }
}

pub fn make_gauge(spec: GaugeSpec) -> Result<Gauge, GaugeError> {
    Gauge::new(spec)
}

pub fn gauge_jet(g: &Gauge, xi: &[f64]) -> Result<Jet, GaugeError> {
    g.jet(xi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SigmaSample {
    pub theta: f64,
    pub point: [f64; 2],
    pub tangent: [f64; 2],
    pub arc_element: f64,
    pub curvature: f64,
    /// Polar radius R(θ) = |point| and its first two θ-derivatives.
    pub radius: [f64; 3],
}

impl SigmaSample {
    pub fn point_vec(&self) -> Vector2<f64> {
        Vector2::new(self.point[0], self.point[1])
    }
}

/// The point of Σ on the ray at angle θ, with its differential geometry.
pub fn sigma_point(g: &Gauge, theta: f64) -> Result<SigmaSample, GaugeError> {
    g.planar()?;
    let (s, c) = theta.sin_cos();
    let (r, r1, r2) = match g.radial_series() {
        Some(series) => series.eval(theta),
        None => {
            // f(θ) = φ(u(θ)); R = 1/f.
            let u = Vector2::new(c, s);
            let perp = Vector2::new(-s, c);
            let jet = g.form.jet2(u);
            let f = jet.value;
            let f1 = jet.gradient.dot(&perp);
            let f2 = perp.dot(&(jet.hessian * perp)) - f;
            (1.0 / f, -f1 / (f * f), 2.0 * f1 * f1 / (f * f * f) - f2 / (f * f))
        }
    };
    let x1 = r1 * c - r * s;
    let y1 = r1 * s + r * c;
    let x2 = r2 * c - 2.0 * r1 * s - r * c;
    let y2 = r2 * s + 2.0 * r1 * c - r * s;
    let speed = (x1 * x1 + y1 * y1).sqrt();
    Ok(SigmaSample {
        theta,
        point: [r * c, r * s],
        tangent: [x1 / speed, y1 / speed],
        arc_element: speed,
        curvature: (x1 * y2 - y1 * x2) / speed.powi(3),
        radius: [r, r1, r2],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", content = "value", rename_all = "kebab-case")]
pub enum ContactOrder {
    Fitted(f64),
    Undetermined,
}

impl ContactOrder {
    pub fn value(&self) -> Option<f64> {
        match self {
            ContactOrder::Fitted(k) => Some(*k),
            ContactOrder::Undetermined => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvatureZero {
    pub theta: f64,
    pub kappa: f64,
    pub contact_order: ContactOrder,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvexityReport {
    pub min_kappa: f64,
    pub max_kappa: f64,
    /// Arcs [θ_start, θ_end] (θ_end may exceed 2π when wrapping) with κ < 1e-12.
    pub flat_arcs: Vec<[f64; 2]>,
    pub zeros: Vec<CurvatureZero>,
    /// Largest contact order over all zeros; 2 when κ never vanishes.
    pub contact_order: ContactOrder,
}

pub const FLAT_KAPPA: f64 = 1e-12;
const ZERO_RELATIVE: f64 = 1e-8;

fn kappa_at(g: &Gauge, theta: f64) -> f64 {
    sigma_point(g, theta).map(|s| s.curvature).unwrap_or(f64::NAN)
}

pub(crate) fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..200 {
        if (b - a).abs() < 1e-15 * (1.0 + a.abs()) {
            break;
        }
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Fits log κ(θ_z ± d) against log d on offsets d ∈ [d_lo, d_hi].
fn fit_contact(g: &Gauge, theta_z: f64, half_gap: f64) -> ContactOrder {
    let d_hi = 1e-1f64.min(0.5 * half_gap);
    let d_lo = 1e-2f64.min(0.2 * d_hi);
    let steps = 8;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for side in [-1.0, 1.0] {
        for i in 0..steps {
            let d = d_lo * (d_hi / d_lo).powf(i as f64 / (steps - 1) as f64);
            let kappa = kappa_at(g, theta_z + side * d);
            if !(kappa > 0.0) {
                return ContactOrder::Undetermined;
            }
            xs.push(d.ln());
            ys.push(kappa.ln());
        }
    }
    match crate::fit::linear_fit(&xs, &ys) {
        Some(fit) if fit.rms_residual < 0.1 && fit.slope.is_finite() => ContactOrder::Fitted(2.0 + fit.slope),
        _ => ContactOrder::Undetermined,
    }
}

/// Samples κ on `m` equispaced rays, locates curvature zeros and estimates
/// their contact orders.
pub fn convexity_audit(g: &Gauge, m: usize) -> Result<ConvexityReport, GaugeError> {
    g.planar()?;
    let m = m.max(64);
    let h = TAU / m as f64;
    let kappas: Vec<f64> = (0..m).map(|i| kappa_at(g, h * i as f64)).collect();
    let max_kappa = kappas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min_kappa = kappas.iter().copied().fold(f64::INFINITY, f64::min);

    let flat: Vec<bool> = kappas.iter().map(|&k| k < FLAT_KAPPA).collect();
    let mut flat_arcs = Vec::new();
    let mut in_flat_run = vec![false; m];
    if flat.iter().all(|&f| f) {
        flat_arcs.push([0.0, TAU]);
        in_flat_run.iter_mut().for_each(|f| *f = true);
    } else {
        // Start scanning just after a non-flat sample so runs never wrap mid-scan.
        let start = (0..m).find(|&i| !flat[i]).unwrap_or(0) + 1;
        let mut i = 0;
        while i < m {
            let idx = (start + i) % m;
            if flat[idx] {
                let mut len = 0;
                while len < m && flat[(idx + len) % m] {
                    len += 1;
                }
                if len >= 3 {
                    let t0 = h * idx as f64;
                    flat_arcs.push([t0, t0 + h * (len - 1) as f64]);
                    for l in 0..len {
                        in_flat_run[(idx + l) % m] = true;
                    }
                }
                i += len;
            } else {
                i += 1;
            }
        }
    }

    let mut candidates = Vec::new();
    for i in 0..m {
        if in_flat_run[i] {
            continue;
        }
        let prev = kappas[(i + m - 1) % m];
        let next = kappas[(i + 1) % m];
        let k = kappas[i];
        if k <= prev && k < next && k < 1e-3 * max_kappa {
            candidates.push(i);
        }
    }
    let mut located = Vec::new();
    for &i in &candidates {
        let centre = h * i as f64;
        let (theta, kappa) = golden_min(|t| kappa_at(g, t), centre - h, centre + h);
        if kappa <= ZERO_RELATIVE * max_kappa {
            located.push((theta.rem_euclid(TAU), kappa));
        }
    }
    let mut zeros = Vec::new();
    for (idx, &(theta, kappa)) in located.iter().enumerate() {
        let mut gap = PI;
        for (jdx, &(other, _)) in located.iter().enumerate() {
            if jdx != idx {
                let d = (theta - other).rem_euclid(TAU);
                gap = gap.min(d.min(TAU - d));
            }
        }
        zeros.push(CurvatureZero {
            theta,
            kappa,
            contact_order: fit_contact(g, theta, gap),
        });
    }

    let contact_order = if !flat_arcs.is_empty() {
        ContactOrder::Undetermined
    } else if zeros.is_empty() {
        ContactOrder::Fitted(2.0)
    } else {
        let mut best: Option<f64> = None;
        for z in &zeros {
            match z.contact_order {
                ContactOrder::Fitted(k) => best = Some(best.map_or(k, |b: f64| b.max(k))),
                ContactOrder::Undetermined => {
                    best = None;
                    break;
                }
            }
        }
        best.map_or(ContactOrder::Undetermined, ContactOrder::Fitted)
    };

    Ok(ConvexityReport {
        min_kappa,
        max_kappa,
        flat_arcs,
        zeros,
        contact_order,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fd_jet(g: &Gauge, xi: Vector2<f64>) -> (Vector2<f64>, Matrix2<f64>) {
        let h = 1e-4 * xi.norm();
        let f = |v: Vector2<f64>| g.value2(v).unwrap();
        let e = [Vector2::new(h, 0.0), Vector2::new(0.0, h)];
        let mut grad = Vector2::zeros();
        let mut hess = Matrix2::zeros();
        for i in 0..2 {
            grad[i] = (f(xi + e[i]) - f(xi - e[i])) / (2.0 * h);
            for j in 0..2 {
                hess[(i, j)] = (f(xi + e[i] + e[j]) - f(xi + e[i] - e[j]) - f(xi - e[i] + e[j]) + f(xi - e[i] - e[j]))
                    / (4.0 * h * h);
            }
        }
        (grad, hess)
    }

    #[test]
    fn circle_jet_at_axis() {
        let g = make_gauge(GaugeSpec::circle()).unwrap();
        let j = g.jet(&[1.0, 0.0]).unwrap();
        assert_eq!(j.value, 1.0);
        assert_eq!(j.gradient.as_slice(), &[1.0, 0.0]);
        assert_eq!(j.hessian, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]));
        let j = g.jet(&[3.0, 4.0]).unwrap();
        assert_relative_eq!(j.value, 5.0, epsilon = 1e-15);
        assert_relative_eq!(j.gradient[0], 0.6, epsilon = 1e-15);
        assert_relative_eq!(j.gradient[1], 0.8, epsilon = 1e-15);
    }

    #[test]
    fn ellipse_and_superellipse_values() {
        let e = make_gauge(GaugeSpec::ellipse(2.0, 1.0)).unwrap();
        assert_relative_eq!(e.value(&[1.0, 1.0]).unwrap(), (0.25f64 + 1.0).sqrt(), epsilon = 1e-15);
        let s = make_gauge(GaugeSpec::superellipse(4)).unwrap();
        assert_relative_eq!(s.value(&[1.0, 1.0]).unwrap(), 2f64.powf(0.25), epsilon = 1e-15);
        assert_relative_eq!(s.value(&[1.0, -2.0]).unwrap(), 17f64.powf(0.25), epsilon = 1e-14);
    }

    #[test]
    fn superellipse_jet_matches_finite_differences() {
        let s = make_gauge(GaugeSpec::superellipse(4)).unwrap();
        let xi = Vector2::new(1.0, 1.0);
        let j = s.jet2(xi).unwrap();
        let (g, h) = fd_jet(&s, xi);
        assert!((j.gradient - g).norm() <= 1e-6 * j.gradient.norm());
        assert!((j.hessian - h).norm() <= 1e-6 * j.hessian.norm());
    }

    #[test]
    fn radial_jet_matches_finite_differences() {
        let r = make_gauge(GaugeSpec::radial(vec![1.0, 0.0, 0.05, 0.01], vec![0.0, 0.0, 0.02])).unwrap();
        for xi in [Vector2::new(0.7, -0.3), Vector2::new(-2.0, 1.5)] {
            let j = r.jet2(xi).unwrap();
            let (g, h) = fd_jet(&r, xi);
            assert!((j.gradient - g).norm() <= 1e-6 * j.gradient.norm());
            assert!((j.hessian - h).norm() <= 1e-5 * j.hessian.norm());
        }
    }

    #[test]
    fn spec_validation() {
        assert!(matches!(
            make_gauge(GaugeSpec::linear_image(GaugeSpec::circle(), vec![vec![1.0, 2.0], vec![0.5, 1.0]])),
            Err(GaugeError::Singular(_))
        ));
        assert!(matches!(make_gauge(GaugeSpec::superellipse(3)), Err(GaugeError::BadExponent(3))));
        assert!(matches!(make_gauge(GaugeSpec::superellipse(0)), Err(GaugeError::BadExponent(0))));
        assert!(matches!(
            make_gauge(GaugeSpec::radial(vec![0.1, 0.5], vec![])),
            Err(GaugeError::RadialNotPositive { .. })
        ));
        assert!(matches!(
            make_gauge(GaugeSpec::radial(vec![1.0, 0.0, 0.0, 0.0, 0.2], vec![])),
            Err(GaugeError::RadialNotConvex { .. })
        ));
        let g = make_gauge(GaugeSpec::circle()).unwrap();
        assert!(matches!(g.jet(&[1e-9, 0.0]), Err(GaugeError::NearOrigin(_))));
        assert!(matches!(g.jet(&[1.0, 0.0, 0.0]), Err(GaugeError::DimensionMismatch { .. })));
    }

    #[test]
    fn spec_json_shape() {
        let spec = GaugeSpec::ellipse(2.0, 1.0);
        let json = serde_json::to_value(&spec).unwrap();
        assert_eq!(json["kind"], "linear-image");
        assert_eq!(json["params"]["base"]["kind"], "circle");
        let back: GaugeSpec = serde_json::from_value(json).unwrap();
        assert_eq!(back, spec);
        let parsed: GaugeSpec =
            serde_json::from_str(r#"{"kind":"superellipse","params":{"k":4},"label":"s4"}"#).unwrap();
        assert_eq!(parsed.kind, GaugeKind::Superellipse { k: 4 });
    }

    #[test]
    fn sigma_point_examples() {
        let c = make_gauge(GaugeSpec::circle()).unwrap();
        let s = sigma_point(&c, PI / 2.0).unwrap();
        assert!(s.point[0].abs() < 1e-15 && (s.point[1] - 1.0).abs() < 1e-15);
        assert_relative_eq!(s.curvature, 1.0, epsilon = 1e-14);
        assert_relative_eq!(s.arc_element, 1.0, epsilon = 1e-14);

        let e = make_gauge(GaugeSpec::ellipse(2.0, 1.0)).unwrap();
        let s = sigma_point(&e, 0.0).unwrap();
        assert_relative_eq!(s.point[0], 2.0, epsilon = 1e-15);
        // Ellipse vertex curvature a/b².
        assert_relative_eq!(s.curvature, 2.0, epsilon = 1e-12);

        let q = make_gauge(GaugeSpec::superellipse(4)).unwrap();
        let s = sigma_point(&q, 0.0).unwrap();
        assert_eq!(s.point, [1.0, 0.0]);
        assert!(s.curvature.abs() < 1e-15);
    }

    #[test]
    fn radial_sigma_matches_generic_route() {
        // Same curve through two code paths: the series directly and f = φ(u).
        let spec = GaugeSpec::radial(vec![1.0, 0.0, 0.08], vec![0.0, 0.0, 0.03]);
        let g = make_gauge(spec).unwrap();
        for i in 0..16 {
            let theta = 0.4 * i as f64;
            let s = sigma_point(&g, theta).unwrap();
            let u = Vector2::new(theta.cos(), theta.sin());
            let jet = g.form.jet2(u);
            let perp = Vector2::new(-theta.sin(), theta.cos());
            let f = jet.value;
            let f1 = jet.gradient.dot(&perp);
            let f2 = perp.dot(&(jet.hessian * perp)) - f;
            let r2 = 2.0 * f1 * f1 / f.powi(3) - f2 / (f * f);
            assert_relative_eq!(s.radius[0], 1.0 / f, epsilon = 1e-13);
            assert_relative_eq!(s.radius[1], -f1 / (f * f), epsilon = 1e-12);
            assert_relative_eq!(s.radius[2], r2, epsilon = 1e-11);
        }
    }

    #[test]
    fn audit_circle() {
        let g = make_gauge(GaugeSpec::circle()).unwrap();
        let rep = convexity_audit(&g, 256).unwrap();
        assert!((rep.min_kappa - 1.0).abs() < 1e-12 && (rep.max_kappa - 1.0).abs() < 1e-12);
        assert!(rep.zeros.is_empty() && rep.flat_arcs.is_empty());
        assert_eq!(rep.contact_order, ContactOrder::Fitted(2.0));
    }

    #[test]
    fn audit_superellipses() {
        for (k, tol) in [(4u32, 0.2), (6, 0.3)] {
            let g = make_gauge(GaugeSpec::superellipse(k)).unwrap();
            let rep = convexity_audit(&g, 1024).unwrap();
            assert_eq!(rep.zeros.len(), 4, "k = {k}: {:?}", rep.zeros);
            for z in &rep.zeros {
                let fitted = z.contact_order.value().unwrap();
                assert!((fitted - k as f64).abs() <= tol, "k = {k}: fitted {fitted}");
                let nearest_axis = (z.theta / (PI / 2.0)).round() * PI / 2.0;
                assert!((z.theta - nearest_axis).abs() < 1e-3);
            }
            assert!(rep.flat_arcs.is_empty());
        }
    }

    #[test]
    fn audit_radial_with_inflection_free_degenerate_points() {
        // r = 1 + cos(4θ)/17 has r² + 2r'² − r r'' = 0 exactly at θ = π/4 + jπ/2.
        let g = make_gauge(GaugeSpec::radial(vec![1.0, 0.0, 0.0, 0.0, 1.0 / 17.0], vec![])).unwrap();
        let rep = convexity_audit(&g, 1024).unwrap();
        assert!(rep.min_kappa >= -1e-10);
        assert!(rep.flat_arcs.is_empty());
        assert_eq!(rep.zeros.len(), 4);
        for z in &rep.zeros {
            assert!(((z.theta - PI / 4.0) / (PI / 2.0) - ((z.theta - PI / 4.0) / (PI / 2.0)).round()).abs() < 1e-3);
            let k = z.contact_order.value().unwrap();
            assert!((k - 4.0).abs() < 0.2, "fitted {k}");
        }
    }
}
