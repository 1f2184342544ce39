//! The weighted cone extension operator, directly and in sliced form, and
//! restriction ratios for separable test families.

use std::collections::HashMap;
use std::f64::consts::{PI, TAU};
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{Matrix3, Vector2, Vector3};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::gauge::{sigma_point, GaugeError};
use crate::measure::{
    angular_nodes, angular_nodes_graded, cone_norm, radial_nodes, weight_kinks, ConeSupport, MeasureError, QuadScheme, Refinement, WeightedConeMeasure,
};
use crate::quad::{self, ComplexEstimate, Estimate};
use crate::sum::{pairwise, pairwise_complex};
use crate::weight::weight_from_jet2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExtensionError {
    #[error(transparent)]
    Gauge(#[from] GaugeError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error("oscillation budget exceeded: |x| = {x}, |t| = {t} (limit 1e3)")]
    Budget { x: f64, t: f64 },
    #[error("family is not separable: {0}")]
    NotSeparable(String),
    #[error("Lebesgue exponent must lie in [1, inf], got {0}")]
    BadExponent(f64),
    #[error("family supplies no decay envelope in the height variable; use a compact support")]
    NoEnvelope,
}

/// Pointwise bound E(t) ≥ |u(ξ, t)| on the cone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Envelope {
    /// u = 0 for t > t_max and |u| ≤ bound.
    Compact { t_max: f64, bound: f64 },
    /// amplitude·e^{−rate·t}
    Exponential { amplitude: f64, rate: f64 },
    /// amplitude·e^{−rate·t²}
    Gaussian { amplitude: f64, rate: f64 },
}

impl Envelope {
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            Envelope::Compact { t_max, bound } => {
                if t <= t_max {
                    bound
                } else {
                    0.0
                }
            }
            Envelope::Exponential { amplitude, rate } => amplitude * (-rate * t).exp(),
            Envelope::Gaussian { amplitude, rate } => amplitude * (-rate * t * t).exp(),
        }
    }

    /// ∫_T^∞ E(t)^q t^a dt for a ∈ {0, 1}.
    pub fn tail(&self, q: f64, a: i32, big_t: f64) -> f64 {
        match *self {
            Envelope::Compact { t_max, bound } => {
                if big_t >= t_max {
                    0.0
                } else {
                    bound.powf(q) * (t_max.powi(a + 1) - big_t.powi(a + 1)) / (a + 1) as f64
                }
            }
            Envelope::Exponential { amplitude, rate } => {
                let b = q * rate;
                let base = amplitude.powf(q) * (-b * big_t).exp();
                if a == 0 {
                    base / b
                } else {
                    base * (big_t / b + 1.0 / (b * b))
                }
            }
            Envelope::Gaussian { amplitude, rate } => {
                let b = q * rate;
                let amp = amplitude.powf(q);
                if a == 0 {
                    amp * 0.5 * (PI / b).sqrt() * erfc(b.sqrt() * big_t)
                } else {
                    amp * (-b * big_t * big_t).exp() / (2.0 * b)
                }
            }
        }
    }

    pub fn mass(&self, q: f64, a: i32) -> f64 {
        self.tail(q, a, 0.0)
    }

    /// Smallest height (to bisection accuracy) whose tail is below `abs_tol`.
    pub fn truncation(&self, q: f64, a: i32, abs_tol: f64) -> f64 {
        if let Envelope::Compact { t_max, .. } = *self {
            return t_max;
        }
        let abs_tol = abs_tol.max(1e-300);
        let mut hi = 1.0;
        while self.tail(q, a, hi) > abs_tol && hi < 1e6 {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.tail(q, a, mid) > abs_tol {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }
}

type Profile = dyn Fn(Vector2<f64>, f64) -> Complex64 + Send + Sync;

/// A function u(ξ, t) on the cone, evaluated at t = φ(ξ), with a decay envelope.
#[derive(Clone)]
pub struct ConeDensity {
    profile: Option<Arc<Profile>>,
    pub envelope: Envelope,
    window: Option<(f64, f64)>,
}

impl fmt::Debug for ConeDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConeDensity")
            .field("zero", &self.profile.is_none())
            .field("envelope", &self.envelope)
            .field("window", &self.window)
            .finish()
    }
}

impl ConeDensity {
    pub fn zero() -> Self {
        Self {
            profile: None,
            envelope: Envelope::Compact { t_max: 0.0, bound: 0.0 },
            window: None,
        }
    }

    pub fn new(envelope: Envelope, f: impl Fn(Vector2<f64>, f64) -> Complex64 + Send + Sync + 'static) -> Self {
        Self {
            profile: Some(Arc::new(f)),
            envelope,
            window: None,
        }
    }

    /// u depending on the height t = φ(ξ) only.
    pub fn from_height(envelope: Envelope, h: impl Fn(f64) -> Complex64 + Send + Sync + 'static) -> Self {
        Self::new(envelope, move |_, t| h(t))
    }

    /// e^{−rate·φ}.
    pub fn exponential(rate: f64) -> Self {
        Self::from_height(Envelope::Exponential { amplitude: 1.0, rate }, move |t| {
            Complex64::new((-rate * t).exp(), 0.0)
        })
    }

    /// e^{−rate·φ²}.
    pub fn gaussian(rate: f64) -> Self {
        Self::from_height(Envelope::Gaussian { amplitude: 1.0, rate }, move |t| {
            Complex64::new((-rate * t * t).exp(), 0.0)
        })
    }

    /// Restricts quadratures to ray angles θ ∈ [lo, hi]; u must vanish (to
    /// working precision) outside.
    pub fn with_theta_window(mut self, lo: f64, hi: f64) -> Self {
        self.window = Some((lo, hi));
        self
    }

    pub fn theta_window(&self) -> Option<(f64, f64)> {
        self.window
    }

    pub fn is_zero(&self) -> bool {
        self.profile.is_none()
    }

    pub fn eval(&self, xi: Vector2<f64>, t: f64) -> Complex64 {
        match &self.profile {
            Some(f) => f(xi, t),
            None => Complex64::new(0.0, 0.0),
        }
    }

    /// u_λ(ξ, t) = u(λξ, λt).
    pub fn dilated(&self, lambda: f64) -> Self {
        let mut out = self.clone();
        if let Some(f) = self.profile.clone() {
            out.profile = Some(Arc::new(move |xi, t| f(xi * lambda, t * lambda)));
        }
        out.envelope = match self.envelope {
            Envelope::Compact { t_max, bound } => Envelope::Compact { t_max: t_max / lambda, bound },
            Envelope::Exponential { amplitude, rate } => Envelope::Exponential { amplitude, rate: rate * lambda },
            Envelope::Gaussian { amplitude, rate } => Envelope::Gaussian {
                amplitude,
                rate: rate * lambda * lambda,
            },
        };
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExtensionOptions {
    pub tol: f64,
    pub max_levels: usize,
    /// Minimum nodes per oscillation period along each axis.
    pub nodes_per_period: f64,
    pub base_radial: usize,
    pub base_angular: usize,
}

impl Default for ExtensionOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_levels: 5,
            nodes_per_period: 10.0,
            base_radial: 48,
            base_angular: 64,
        }
    }
}

pub const OSCILLATION_LIMIT: f64 = 1e3;

fn budget(x: Vector2<f64>, t: f64) -> Result<(), ExtensionError> {
    if !(x.norm() <= OSCILLATION_LIMIT && t.abs() <= OSCILLATION_LIMIT) {
        return Err(ExtensionError::Budget { x: x.norm(), t: t.abs() });
    }
    Ok(())
}

fn round_up(count: f64, multiple: usize) -> usize {
    let c = count.ceil().max(multiple as f64) as usize;
    c.div_ceil(multiple) * multiple
}

fn phase(arg: f64) -> Complex64 {
    let (s, c) = (TAU * arg).sin_cos();
    Complex64::new(c, s)
}

struct Setup {
    theta: (f64, f64),
    /// Angles where the weight factor of the density is not smooth.
    kinks: Vec<f64>,
    height: (f64, f64),
    trivial: f64,
}

fn setup(u: &ConeDensity, mu: &WeightedConeMeasure, opts: &ExtensionOptions) -> Result<Setup, ExtensionError> {
    let g = &mu.gauge;
    let theta = u.theta_window().unwrap_or((0.0, TAU));
    let a = mu.t_power();
    let probe = angular_nodes(theta.0, theta.1, 256);
    let mut slice_mass = 0.0;
    for &(th, w) in &probe {
        slice_mass += w * mu.slice_density(&sigma_point(g, th)?)?;
    }
    let height = match mu.height_range() {
        Some(r) => r,
        None => {
            let total = u.envelope.mass(1.0, a) * slice_mass;
            (0.0, u.envelope.truncation(1.0, a, 1e-3 * opts.tol * total / slice_mass.max(f64::MIN_POSITIVE)))
        }
    };
    let trivial = slice_mass * (u.envelope.mass(1.0, a) - u.envelope.tail(1.0, a, height.1)).max(0.0);
    Ok(Setup {
        theta,
        kinks: weight_kinks(mu)?,
        height,
        trivial,
    })
}

fn refine_complex(
    opts: &ExtensionOptions,
    floor: f64,
    mut level: impl FnMut(usize) -> Result<Complex64, ExtensionError>,
) -> Result<ComplexEstimate, ExtensionError> {
    let mut prev = level(0)?;
    let mut error = f64::INFINITY;
    for l in 1..=opts.max_levels.max(1) {
        let value = level(l)?;
        error = (value - prev).norm();
        if error <= opts.tol * value.norm().max(floor) {
            return Ok(ComplexEstimate {
                value,
                error,
                converged: true,
            });
        }
        prev = value;
    }
    Ok(ComplexEstimate {
        value: prev,
        error,
        converged: false,
    })
}

/// Direct quadrature of ∫ e^{2πi(x·ξ + tφ(ξ))} u(ξ, φ(ξ)) dμ(ξ) in Euclidean
/// polar coordinates ξ = ρ(cos ψ, sin ψ).
pub fn extension_eval(
    u: &ConeDensity,
    x: Vector2<f64>,
    t: f64,
    mu: &WeightedConeMeasure,
    opts: ExtensionOptions,
) -> Result<ComplexEstimate, ExtensionError> {
    budget(x, t)?;
    mu.gauge.planar()?;
    if u.is_zero() {
        return Ok(ComplexEstimate {
            value: Complex64::new(0.0, 0.0),
            error: 0.0,
            converged: true,
        });
    }
    let g = mu.gauge.clone();
    let st = setup(u, mu, &opts)?;
    let (h0, h1) = st.height;

    // Per-ray data at ψ: (unit vector, φ(e), density factor without ρ, |∇φ(e)|).
    let ray_data = |psi: f64| -> Result<(Vector2<f64>, f64, f64, f64), ExtensionError> {
        let e = Vector2::new(psi.cos(), psi.sin());
        let jet = g.jet2(e)?;
        let grad = jet.gradient.norm();
        let dens = match mu.support {
            ConeSupport::SurfaceMeasure => (1.0 + grad * grad).sqrt(),
            ConeSupport::FullCone { .. } | ConeSupport::Compact => {
                let w = weight_from_jet2(jet.value, &jet.gradient, &jet.hessian, mu.conv).max(0.0);
                let we = if mu.exponent == 0.0 { 1.0 } else { w.powf(mu.exponent) };
                match mu.support {
                    ConeSupport::FullCone { .. } => we / jet.value,
                    _ => we,
                }
            }
        };
        Ok((e, jet.value, dens, grad))
    };

    let probe: Result<Vec<_>, ExtensionError> = angular_nodes(st.theta.0, st.theta.1, 256)
        .iter()
        .map(|&(psi, _)| ray_data(psi))
        .collect();
    let probe = probe?;
    let phi_min = probe.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let phi_max = probe.iter().map(|r| r.1).fold(0.0, f64::max);
    let grad_max = probe.iter().map(|r| r.3).fold(0.0, f64::max);
    let rho_max = h1 / phi_min;
    let periods_r = (rho_max - h0 / phi_max) * (x.norm() + t.abs() * phi_max);
    let periods_a = (st.theta.1 - st.theta.0) * rho_max * (x.norm() + t.abs() * grad_max);
    let nr0 = round_up((opts.nodes_per_period * periods_r).max(opts.base_radial as f64), 4);
    let na0 = round_up((opts.nodes_per_period * periods_a).max(opts.base_angular as f64), 8);
    let rho_power = mu.t_power();

    refine_complex(&opts, 1e-3 * st.trivial, |l| {
        let an = angular_nodes_graded(st.theta.0, st.theta.1, na0 << l, &st.kinks);
        let nr = nr0 << l;
        let rays: Result<Vec<Complex64>, ExtensionError> = an
            .par_iter()
            .map(|&(psi, wa)| {
                let (e, phi_e, dens, _) = ray_data(psi)?;
                if dens == 0.0 {
                    return Ok(Complex64::new(0.0, 0.0));
                }
                let freq = x.dot(&e) + t * phi_e;
                let rn = radial_nodes(h0 / phi_e, h1 / phi_e, nr);
                let inner = quad::integrate_complex(
                    |rho| phase(rho * freq) * u.eval(e * rho, rho * phi_e) * rho.powi(rho_power),
                    &rn,
                );
                Ok(inner * (wa * dens))
            })
            .collect();
        Ok(pairwise_complex(&rays?))
    })
}

/// Iterated form: outer height integral of the curve integral
/// ∫_Σ e^{2πis x·ξ'} u(sξ', s) κ^e |∇φ|^{3e−1} dσ(ξ'), with κ the parametric
/// curvature of Σ (w^e/|∇φ| = κ^e |∇φ|^{3e−1}).
pub fn extension_eval_sliced(
    u: &ConeDensity,
    x: Vector2<f64>,
    t: f64,
    mu: &WeightedConeMeasure,
    opts: ExtensionOptions,
) -> Result<ComplexEstimate, ExtensionError> {
    budget(x, t)?;
    mu.gauge.planar()?;
    if u.is_zero() {
        return Ok(ComplexEstimate {
            value: Complex64::new(0.0, 0.0),
            error: 0.0,
            converged: true,
        });
    }
    let g = mu.gauge.clone();
    let st = setup(u, mu, &opts)?;
    let (h0, h1) = st.height;
    let a = mu.t_power();

    let slice = |theta: f64| -> Result<(Vector2<f64>, f64, f64), ExtensionError> {
        let s = sigma_point(&g, theta)?;
        let p = s.point_vec();
        let dens = match mu.support {
            ConeSupport::SurfaceMeasure => {
                let grad = g.jet2(p)?.gradient.norm();
                (1.0 + grad * grad).sqrt() * s.arc_element / grad
            }
            _ => {
                let kappa = s.curvature.max(0.0);
                let e = mu.exponent;
                let grad_factor = if (3.0 * e - 1.0).abs() < 1e-15 {
                    1.0
                } else {
                    g.jet2(p)?.gradient.norm().powf(3.0 * e - 1.0)
                };
                let ke = if e == 0.0 { 1.0 } else { kappa.powf(e) };
                ke * grad_factor * s.arc_element
            }
        };
        Ok((p, dens, s.arc_element))
    };
    let probe: Result<Vec<_>, ExtensionError> = angular_nodes(st.theta.0, st.theta.1, 256)
        .iter()
        .map(|&(th, _)| slice(th))
        .collect();
    let probe = probe?;
    let r_max = probe.iter().map(|s| s.0.norm()).fold(0.0, f64::max);
    let arc_max = probe.iter().map(|s| s.2).fold(0.0, f64::max);
    let periods_s = (h1 - h0) * (t.abs() + x.norm() * r_max);
    let periods_a = (st.theta.1 - st.theta.0) * h1 * x.norm() * arc_max;
    let ns0 = round_up((opts.nodes_per_period * periods_s).max(opts.base_radial as f64), 4);
    let na0 = round_up((opts.nodes_per_period * periods_a).max(opts.base_angular as f64), 8);

    refine_complex(&opts, 1e-3 * st.trivial, |l| {
        let an = angular_nodes_graded(st.theta.0, st.theta.1, na0 << l, &st.kinks);
        let curve: Result<Vec<(Vector2<f64>, f64)>, ExtensionError> = an
            .par_iter()
            .map(|&(th, w)| slice(th).map(|(p, d, _)| (p, d * w)))
            .collect();
        let curve = curve?;
        let sn = radial_nodes(h0, h1, ns0 << l);
        let heights: Vec<Complex64> = sn
            .par_iter()
            .map(|&(s, ws)| {
                let terms: Vec<Complex64> = curve
                    .iter()
                    .map(|&(p, d)| {
                        if d == 0.0 {
                            Complex64::new(0.0, 0.0)
                        } else {
                            phase(s * x.dot(&p)) * u.eval(p * s, s) * d
                        }
                    })
                    .collect();
                pairwise_complex(&terms) * phase(t * s) * (ws * s.powi(a))
            })
            .collect();
        Ok(pairwise_complex(&heights))
    })
}

/// One-dimensional frequency profiles of a separable family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Profile1D {
    /// e^{−πy²}
    Gaussian,
    /// e·e^{−1/(1−y²)} on (−1, 1)
    Bump,
    Zero,
}

impl Profile1D {
    pub fn eval(self, y: f64) -> f64 {
        match self {
            Profile1D::Gaussian => (-PI * y * y).exp(),
            Profile1D::Bump => {
                if y.abs() < 1.0 {
                    (1.0 - 1.0 / (1.0 - y * y)).exp()
                } else {
                    0.0
                }
            }
            Profile1D::Zero => 0.0,
        }
    }

    /// Half-width of the numerical support.
    fn reach(self) -> f64 {
        match self {
            Profile1D::Gaussian => 6.5,
            Profile1D::Bump | Profile1D::Zero => 1.0,
        }
    }

    /// Taylor coefficients of the profile at y0 up to order m (|y0| < 1 for the bump).
    fn taylor(self, y0: f64, m: usize) -> Vec<f64> {
        // Profile = exp(s(y)); s expanded around y0.
        let mut s = vec![0.0; m + 1];
        match self {
            Profile1D::Gaussian => {
                s[0] = -PI * y0 * y0;
                if m >= 1 {
                    s[1] = -2.0 * PI * y0;
                }
                if m >= 2 {
                    s[2] = -PI;
                }
            }
            Profile1D::Bump => {
                // s = 1 − 1/(1 − y²); reciprocal of a(h) = (1 − y0²) − 2y0 h − h².
                let a = [1.0 - y0 * y0, -2.0 * y0, -1.0];
                let mut b = vec![0.0; m + 1];
                b[0] = 1.0 / a[0];
                for n in 1..=m {
                    let mut acc = 0.0;
                    for (k, ak) in a.iter().enumerate().skip(1) {
                        if k <= n {
                            acc += ak * b[n - k];
                        }
                    }
                    b[n] = -acc / a[0];
                }
                for n in 0..=m {
                    s[n] = -b[n];
                }
                s[0] += 1.0;
            }
            Profile1D::Zero => return vec![0.0; m + 1],
        }
        let mut e = vec![0.0; m + 1];
        e[0] = s[0].exp();
        for n in 1..=m {
            let mut acc = 0.0;
            for k in 1..=n {
                acc += k as f64 * s[k] * e[n - k];
            }
            e[n] = acc / n as f64;
        }
        e
    }

    /// ∫|g^{(m)}|.
    fn derivative_l1(self, m: usize) -> f64 {
        let factorial: f64 = (1..=m).map(|i| i as f64).product();
        let r = self.reach();
        let edge = if self == Profile1D::Bump { 1.0 - 1e-9 } else { r };
        let nodes = quad::composite(-edge, edge, 64, 16);
        quad::integrate(|y| (self.taylor(y, m)[m] * factorial).abs(), &nodes)
    }

    /// ǧ(x) = ∫ g(y) e^{2πixy} dy (real: every profile is even).
    pub fn inverse_transform(self, x: f64) -> f64 {
        if self == Profile1D::Zero {
            return 0.0;
        }
        let r = self.reach();
        let periods = x.abs() * r;
        let panels = (periods.ceil() as usize).max(4);
        let nodes = quad::composite(0.0, r, panels, 16);
        2.0 * quad::integrate(|y| self.eval(y) * (TAU * x * y).cos(), &nodes)
    }

    /// Closed-form ‖ǧ‖_p where known.
    pub fn closed_form_norm(self, p: f64) -> Option<f64> {
        match self {
            Profile1D::Gaussian => Some(if p.is_infinite() { 1.0 } else { p.powf(-1.0 / (2.0 * p)) }),
            Profile1D::Zero => Some(0.0),
            Profile1D::Bump => None,
        }
    }

    /// ‖ǧ‖_{L^p(ℝ)} by quadrature; the tail beyond X is bounded through
    /// |ǧ(x)| ≤ ‖g^{(m)}‖₁/(2π|x|)^m.
    pub fn inverse_transform_norm(self, p: f64, tol: f64) -> Estimate {
        if self == Profile1D::Zero {
            return Estimate {
                value: 0.0,
                error: 0.0,
                converged: true,
            };
        }
        static MEMO: OnceLock<Mutex<HashMap<(Profile1D, u64, u64), Estimate>>> = OnceLock::new();
        let key = (self, p.to_bits(), tol.to_bits());
        let memo = MEMO.get_or_init(|| Mutex::new(HashMap::new()));
        if let Some(e) = memo.lock().expect("memo poisoned").get(&key) {
            return *e;
        }
        let est = self.inverse_transform_norm_uncached(p, tol);
        memo.lock().expect("memo poisoned").insert(key, est);
        est
    }

    fn inverse_transform_norm_uncached(self, p: f64, tol: f64) -> Estimate {
        if p.is_infinite() {
            // Even profiles with g ≥ 0 peak at x = 0.
            let v = self.inverse_transform(0.0);
            return Estimate {
                value: v,
                error: 0.0,
                converged: true,
            };
        }
        let scale = self.inverse_transform(0.0).abs();
        // ∫_{|x|>X} |ǧ|^p ≤ 2 (C/(2π)^m)^p X^{1−mp}/(mp − 1).
        let target = 1e-3 * tol * scale.powf(p);
        let mut best = (f64::INFINITY, 0usize, 0.0);
        for m in [2usize, 4, 6, 8, 10, 12] {
            if (m as f64) * p <= 1.0 {
                continue;
            }
            let c = self.derivative_l1(m) / TAU.powi(m as i32);
            let mp = m as f64 * p;
            // Solve 2 c^p X^{1−mp}/(mp−1) = target.
            let x = (2.0 * c.powf(p) / ((mp - 1.0) * target)).powf(1.0 / (mp - 1.0));
            if x < best.0 {
                best = (x, m, c);
            }
        }
        let (big_x, m, c) = best;
        let big_x = big_x.max(1.0);
        let mp = m as f64 * p;
        let tail = 2.0 * c.powf(p) * big_x.powf(1.0 - mp) / (mp - 1.0);
        let level = |panels: usize| -> f64 {
            let nodes = quad::composite(0.0, big_x, panels, 16);
            let vals: Vec<f64> = nodes
                .par_iter()
                .map(|&(x, w)| w * self.inverse_transform(x).abs().powf(p))
                .collect();
            2.0 * pairwise(&vals)
        };
        let mut panels = (big_x.ceil() as usize).max(8);
        let mut prev = level(panels);
        let mut error = f64::INFINITY;
        let mut converged = false;
        for _ in 0..5 {
            panels *= 2;
            let value = level(panels);
            error = (value - prev).abs();
            prev = value;
            if error <= 1e-3 * tol * value {
                converged = true;
                break;
            }
        }
        let power = prev + tail;
        Estimate {
            value: power.powf(1.0 / p),
            error: (error + tail) / (p * power) * power.powf(1.0 / p),
            converged,
        }
    }
}

/// One step of the linear part of y = Lζ − c, applied in sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LinearStep {
    /// Rotation by `angle` in the (ζ₁, ζ₂) plane.
    Rotation { angle: f64 },
    /// Unimodular map (det = 1), row-major.
    Shear { matrix: [[f64; 3]; 3] },
    Scale { diag: [f64; 3] },
}

impl LinearStep {
    fn matrix(&self) -> Matrix3<f64> {
        match *self {
            LinearStep::Rotation { angle } => {
                let (s, c) = angle.sin_cos();
                Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
            }
            LinearStep::Shear { matrix } => Matrix3::from_fn(|i, j| matrix[i][j]),
            LinearStep::Scale { diag } => Matrix3::from_diagonal(&Vector3::from(diag)),
        }
    }

    /// Determinant by structure: rotations and shears are unimodular.
    fn determinant(&self) -> f64 {
        match *self {
            LinearStep::Scale { diag } => diag.iter().product(),
            _ => 1.0,
        }
    }
}

/// F̂(ζ) = Π g_i(y_i) with y = Lζ − c and L a product of rotations,
/// unimodular shears and diagonal scalings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeparableTestFamily {
    pub profiles: [Profile1D; 3],
    pub steps: Vec<LinearStep>,
    pub offset: [f64; 3],
    #[serde(skip)]
    linear: Matrix3<f64>,
}

impl SeparableTestFamily {
    pub fn new(profiles: [Profile1D; 3], steps: Vec<LinearStep>, offset: [f64; 3]) -> Result<Self, ExtensionError> {
        let mut linear = Matrix3::identity();
        for step in &steps {
            match step {
                LinearStep::Shear { .. } => {
                    let det = step.matrix().determinant();
                    if (det - 1.0).abs() > 1e-12 {
                        return Err(ExtensionError::NotSeparable(format!("shear has determinant {det}, not 1")));
                    }
                }
                LinearStep::Scale { diag } => {
                    if diag.iter().any(|d| !(d.is_finite() && *d != 0.0)) {
                        return Err(ExtensionError::NotSeparable(format!("degenerate scaling {diag:?}")));
                    }
                }
                LinearStep::Rotation { angle } => {
                    if !angle.is_finite() {
                        return Err(ExtensionError::NotSeparable("non-finite rotation".into()));
                    }
                }
            }
            linear = step.matrix() * linear;
        }
        Ok(Self {
            profiles,
            steps,
            offset,
            linear,
        })
    }

    /// e^{−π|ξ|²}·e^{−π((η − centre)/width)²}.
    pub fn gaussian(centre: f64, width: f64) -> Result<Self, ExtensionError> {
        Self::new(
            [Profile1D::Gaussian; 3],
            vec![LinearStep::Scale {
                diag: [1.0, 1.0, 1.0 / width],
            }],
            [0.0, 0.0, centre / width],
        )
    }

    pub fn is_zero(&self) -> bool {
        self.profiles.contains(&Profile1D::Zero)
    }

    pub fn linear_map(&self) -> Matrix3<f64> {
        self.linear
    }

    /// |det L| from the factor structure.
    pub fn jacobian(&self) -> f64 {
        self.steps.iter().map(LinearStep::determinant).product::<f64>().abs()
    }

    pub fn eval(&self, zeta: [f64; 3]) -> f64 {
        let y = self.linear * Vector3::from(zeta) - Vector3::from(self.offset);
        self.profiles[0].eval(y[0]) * self.profiles[1].eval(y[1]) * self.profiles[2].eval(y[2])
    }

    /// Bound on |F̂(ξ, t)| in t alone, when y₃ depends on η only.
    pub fn envelope(&self) -> Option<Envelope> {
        let row = self.linear.row(2);
        if row[0].abs() > 1e-14 || row[1].abs() > 1e-14 {
            return None;
        }
        let s = row[2];
        let c = self.offset[2];
        match self.profiles[2] {
            // (st − c)² ≥ s²t²/2 − c².
            Profile1D::Gaussian => Some(Envelope::Gaussian {
                amplitude: (PI * c * c).exp(),
                rate: PI * s * s / 2.0,
            }),
            Profile1D::Bump => Some(Envelope::Compact {
                t_max: ((1.0 + c) / s).abs().max(((c - 1.0) / s).abs()),
                bound: 1.0,
            }),
            Profile1D::Zero => Some(Envelope::Compact { t_max: 0.0, bound: 0.0 }),
        }
    }

    pub fn cone_density(self: &Arc<Self>, compact_support: bool) -> Result<ConeDensity, ExtensionError> {
        if self.is_zero() {
            return Ok(ConeDensity::zero());
        }
        let envelope = match (compact_support, self.envelope()) {
            (true, _) => Envelope::Compact { t_max: 2.0, bound: 1.0 },
            (false, Some(e)) => e,
            (false, None) => return Err(ExtensionError::NoEnvelope),
        };
        let fam = self.clone();
        Ok(ConeDensity::new(envelope, move |xi, t| {
            Complex64::new(fam.eval([xi[0], xi[1], t]), 0.0)
        }))
    }

    /// ‖F‖_{L^p(ℝ³)} = |det L|^{−1/p'} Π ‖ǧ_i‖_p.
    pub fn physical_norm(&self, p: f64, tol: f64) -> Estimate {
        let p_dual = dual_exponent(p);
        let mut value = self.jacobian().powf(-1.0 / p_dual);
        let mut rel = 0.0;
        let mut converged = true;
        for prof in self.profiles {
            let e = prof.inverse_transform_norm(p, tol);
            value *= e.value;
            converged &= e.converged;
            if e.value > 0.0 {
                rel += e.error / e.value;
            }
        }
        Estimate {
            value,
            error: rel * value,
            converged,
        }
    }
}

pub fn dual_exponent(p: f64) -> f64 {
    if p == 1.0 {
        f64::INFINITY
    } else if p.is_infinite() {
        1.0
    } else {
        p / (p - 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatioEstimate {
    pub ratio: f64,
    pub numerator: Estimate,
    pub denominator: Estimate,
    pub converged: bool,
}

/// ‖F̂|_cone‖_{L^q(μ)} / ‖F‖_{L^p(ℝ³)}: a lower bound for the restriction
/// constant.
pub fn family_ratio(
    fam: &Arc<SeparableTestFamily>,
    p: f64,
    q: f64,
    mu: &WeightedConeMeasure,
    scheme: QuadScheme,
    opts: Refinement,
    theta_window: Option<(f64, f64)>,
) -> Result<RatioEstimate, ExtensionError> {
    if !(p >= 1.0) {
        return Err(ExtensionError::BadExponent(p));
    }
    if !(q >= 1.0) {
        return Err(ExtensionError::BadExponent(q));
    }
    let zero = Estimate {
        value: 0.0,
        error: 0.0,
        converged: true,
    };
    if fam.is_zero() {
        return Ok(RatioEstimate {
            ratio: 0.0,
            numerator: zero,
            denominator: zero,
            converged: true,
        });
    }
    let mut u = fam.cone_density(mu.height_range().is_some())?;
    if let Some((lo, hi)) = theta_window {
        u = u.with_theta_window(lo, hi);
    }
    let numerator = cone_norm(&u, mu, q, scheme, opts)?;
    let denominator = fam.physical_norm(p, opts.tol);
    Ok(RatioEstimate {
        ratio: numerator.value / denominator.value,
        numerator,
        denominator,
        converged: numerator.converged && denominator.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauge::{make_gauge, GaugeSpec};

    fn circle_mu() -> WeightedConeMeasure {
        WeightedConeMeasure::full_cone(Arc::new(make_gauge(GaugeSpec::circle()).unwrap()))
    }

    #[test]
    fn envelope_tails_match_quadrature() {
        let envs = [
            Envelope::Exponential { amplitude: 2.0, rate: 1.5 },
            Envelope::Gaussian { amplitude: 1.2, rate: 0.7 },
            Envelope::Compact { t_max: 2.0, bound: 3.0 },
        ];
        for e in envs {
            for a in [0, 1] {
                let end = if let Envelope::Compact { t_max, .. } = e { t_max } else { 40.0 };
                let nodes = quad::composite(0.5, end, 200, 16);
                let direct = quad::integrate(|t| e.at(t).powf(1.5) * t.powi(a), &nodes);
                assert!((direct - e.tail(1.5, a, 0.5)).abs() < 1e-10 * direct.max(1.0), "{e:?} a={a}");
            }
        }
        let e = Envelope::Gaussian { amplitude: 1.0, rate: PI };
        let t = e.truncation(1.0, 0, 1e-12);
        assert!(e.tail(1.0, 0, t) <= 1e-12 && e.tail(1.0, 0, 0.99 * t) > 1e-12);
    }

    #[test]
    fn zero_density_is_exactly_zero() {
        let mu = circle_mu();
        let z = ConeDensity::zero();
        let x = Vector2::new(0.3, 0.1);
        assert_eq!(extension_eval(&z, x, 0.5, &mu, ExtensionOptions::default()).unwrap().value, Complex64::new(0.0, 0.0));
        assert_eq!(
            extension_eval_sliced(&z, x, 0.5, &mu, ExtensionOptions::default()).unwrap().value,
            Complex64::new(0.0, 0.0)
        );
    }

    #[test]
    fn closed_form_at_origin() {
        let mu = circle_mu();
        let u = ConeDensity::exponential(TAU);
        for t in [0.0, 1.0, -0.7] {
            let v = extension_eval(&u, Vector2::zeros(), t, &mu, ExtensionOptions::default()).unwrap();
            let exact = Complex64::new(1.0, 0.0) / Complex64::new(1.0, -t);
            assert!((v.value - exact).norm() < 1e-6, "t = {t}: {:?}", v);
        }
    }

    #[test]
    fn conjugate_symmetry() {
        let mu = circle_mu();
        let u = ConeDensity::gaussian(PI);
        let x = Vector2::new(0.8, -0.4);
        let a = extension_eval(&u, x, 0.6, &mu, ExtensionOptions::default()).unwrap().value;
        let b = extension_eval(&u, -x, -0.6, &mu, ExtensionOptions::default()).unwrap().value;
        assert!((a - b.conj()).norm() < 1e-10);
    }

    #[test]
    fn budget_is_enforced() {
        let mu = circle_mu();
        let u = ConeDensity::gaussian(PI);
        assert!(matches!(
            extension_eval(&u, Vector2::new(2e3, 0.0), 0.0, &mu, ExtensionOptions::default()),
            Err(ExtensionError::Budget { .. })
        ));
    }

    #[test]
    fn direct_and_sliced_agree_on_ellipse() {
        let g = Arc::new(make_gauge(GaugeSpec::ellipse(1.5, 0.8)).unwrap());
        let mu = WeightedConeMeasure::full_cone(g);
        let u = ConeDensity::gaussian(PI);
        let x = Vector2::new(0.7, -1.1);
        let a = extension_eval(&u, x, 1.3, &mu, ExtensionOptions::default()).unwrap();
        let b = extension_eval_sliced(&u, x, 1.3, &mu, ExtensionOptions::default()).unwrap();
        assert!(a.converged && b.converged);
        assert!((a.value - b.value).norm() <= 1e-7 * a.value.norm(), "{a:?} {b:?}");
    }

    #[test]
    fn dilation_law() {
        // E[u_λ](λx, λt) = E[u](x, t)/λ for the full-cone measure dξ/φ.
        let mu = circle_mu();
        let u = ConeDensity::gaussian(PI);
        let lambda = 1.7;
        let x = Vector2::new(0.4, 0.2);
        let base = extension_eval(&u, x, 0.5, &mu, ExtensionOptions::default()).unwrap().value;
        let scaled = extension_eval(&u.dilated(lambda), x * lambda, 0.5 * lambda, &mu, ExtensionOptions::default())
            .unwrap()
            .value;
        assert!((scaled * lambda - base).norm() < 1e-8 * base.norm());
    }

    #[test]
    fn taylor_coefficients_match_finite_differences() {
        for prof in [Profile1D::Gaussian, Profile1D::Bump] {
            let y0 = 0.3;
            let c = prof.taylor(y0, 2);
            let h = 1e-4;
            let d1 = (prof.eval(y0 + h) - prof.eval(y0 - h)) / (2.0 * h);
            let d2 = (prof.eval(y0 + h) - 2.0 * prof.eval(y0) + prof.eval(y0 - h)) / (h * h);
            assert!((c[0] - prof.eval(y0)).abs() < 1e-14);
            assert!((c[1] - d1).abs() < 1e-7);
            assert!((2.0 * c[2] - d2).abs() < 1e-5);
        }
    }

    #[test]
    fn gaussian_profile_norms() {
        for p in [1.2, 2.0, 3.5] {
            let est = Profile1D::Gaussian.inverse_transform_norm(p, 1e-9);
            let exact = Profile1D::Gaussian.closed_form_norm(p).unwrap();
            assert!(est.converged);
            assert!((est.value - exact).abs() < 1e-8 * exact, "p = {p}: {} vs {exact}", est.value);
        }
        assert!((Profile1D::Gaussian.inverse_transform(0.7) - (-PI * 0.49f64).exp()).abs() < 1e-13);
    }

    #[test]
    fn bump_profile_norm_is_finite_and_plancherel() {
        let est = Profile1D::Bump.inverse_transform_norm(2.0, 1e-8);
        let nodes = quad::composite(-1.0, 1.0, 32, 16);
        let l2 = quad::integrate(|y| Profile1D::Bump.eval(y).powi(2), &nodes).sqrt();
        assert!((est.value - l2).abs() < 1e-6 * l2, "{} vs {l2}", est.value);
    }

    #[test]
    fn separable_family_rules() {
        let bad = SeparableTestFamily::new(
            [Profile1D::Gaussian; 3],
            vec![LinearStep::Shear {
                matrix: [[2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            }],
            [0.0; 3],
        );
        assert!(matches!(bad, Err(ExtensionError::NotSeparable(_))));
        let fam = SeparableTestFamily::new(
            [Profile1D::Gaussian; 3],
            vec![
                LinearStep::Rotation { angle: 0.3 },
                LinearStep::Shear {
                    matrix: [[1.0, 0.0, 0.0], [0.4, 1.0, -0.2], [0.0, 0.0, 1.0]],
                },
                LinearStep::Scale { diag: [4.0, 16.0, 2.0] },
            ],
            [0.0, 0.0, 3.0],
        )
        .unwrap();
        assert!((fam.jacobian() - 128.0).abs() < 1e-12);
        assert!((fam.linear_map().determinant() - 128.0).abs() < 1e-9);
    }

    #[test]
    fn family_ratio_zero_and_stability() {
        let g = Arc::new(make_gauge(GaugeSpec::circle()).unwrap());
        let mu = WeightedConeMeasure::compact(g);
        let zero = Arc::new(
            SeparableTestFamily::new([Profile1D::Zero, Profile1D::Gaussian, Profile1D::Gaussian], vec![], [0.0; 3]).unwrap(),
        );
        let r = family_ratio(&zero, 2.0, 2.0, &mu, QuadScheme::default(), Refinement::default(), None).unwrap();
        assert_eq!(r.ratio, 0.0);
        let fam = Arc::new(SeparableTestFamily::gaussian(1.5, 0.3).unwrap());
        let coarse = family_ratio(&fam, 2.0, 2.0, &mu, QuadScheme::default(), Refinement { tol: 1e-8, max_levels: 5 }, None).unwrap();
        let fine = family_ratio(
            &fam,
            2.0,
            2.0,
            &mu,
            QuadScheme { radial: 64, angular: 256 },
            Refinement { tol: 1e-8, max_levels: 5 },
            None,
        )
        .unwrap();
        assert!(coarse.converged && fine.converged);
        assert!(coarse.ratio.is_finite() && coarse.ratio > 0.0);
        assert!((coarse.ratio - fine.ratio).abs() <= 1e-4 * fine.ratio);
    }
}
