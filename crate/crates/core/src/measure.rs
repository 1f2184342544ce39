//! Plane and cone quadrature, weighted cone measures, Lorentz norms and the
//! dyadic sublevel decomposition of the weight.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::sync::Arc;

use nalgebra::Vector2;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::extension::ConeDensity;
use crate::fit::{linear_fit, LinearFit};
use crate::gauge::{convexity_audit, golden_min, sigma_point, ContactOrder, Gauge, GaugeError, SigmaSample};
use crate::quad::{self, Estimate};
use crate::sum::pairwise;
use crate::weight::{weight_from_jet2, WeightConvention};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error(transparent)]
    Gauge(#[from] GaugeError),
    #[error("Lebesgue exponent must be >= 1, got {0}")]
    BadExponent(f64),
    #[error("quadrature needs at least 16 nodes per axis, got {radial}x{angular}")]
    TooFewNodes { radial: usize, angular: usize },
    #[error("invalid range [{0}, {1}]")]
    BadRange(f64, f64),
    #[error("sample {index} has invalid value {value} or measure {measure}")]
    BadSample { index: usize, value: f64, measure: f64 },
}

/// Base node counts of a tensor rule; each refinement level doubles both.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadScheme {
    pub radial: usize,
    pub angular: usize,
}

impl Default for QuadScheme {
    fn default() -> Self {
        Self {
            radial: 16,
            angular: 64,
        }
    }
}

impl QuadScheme {
    fn validate(&self) -> Result<(), MeasureError> {
        if self.radial < 16 || self.angular < 16 {
            return Err(MeasureError::TooFewNodes {
                radial: self.radial,
                angular: self.angular,
            });
        }
        Ok(())
    }

    fn level(&self, l: usize) -> (usize, usize) {
        (self.radial << l, self.angular << l)
    }
}

/// Relative tolerance and refinement budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Refinement {
    pub tol: f64,
    pub max_levels: usize,
}

impl Default for Refinement {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_levels: 6,
        }
    }
}

const ANGULAR_PANELS: usize = 8;
const RADIAL_PANELS: usize = 4;

pub(crate) fn angular_nodes(lo: f64, hi: f64, count: usize) -> Vec<(f64, f64)> {
    quad::composite(lo, hi, ANGULAR_PANELS, (count / ANGULAR_PANELS).max(2))
}

/// Levels of geometric grading towards each kink; the innermost panel is
/// 2^{-16} of a base panel.
const KINK_LEVELS: usize = 16;
const KINK_AUDIT_RAYS: usize = 1024;
const KINK_SLACK: f64 = 1e-6;

/// Ray angles where w^e fails to be smooth: curvature zeros and the ends of
/// flat arcs. Empty for integer e, where w^e is as smooth as φ.
pub(crate) fn weight_kinks(mu: &WeightedConeMeasure) -> Result<Vec<f64>, GaugeError> {
    if mu.exponent.fract() == 0.0 || matches!(mu.support, ConeSupport::SurfaceMeasure) {
        return Ok(Vec::new());
    }
    let rep = convexity_audit(&mu.gauge, KINK_AUDIT_RAYS)?;
    let g = &mu.gauge;
    let w_at = |psi: f64| -> f64 {
        g.jet2(Vector2::new(psi.cos(), psi.sin()))
            .map(|j| weight_from_jet2(j.value, &j.gradient, &j.hessian, mu.conv).max(0.0))
            .unwrap_or(f64::NAN)
    };
    // The parametric κ near a zero only has absolute accuracy; the jet-based
    // w keeps relative accuracy, and w^{1/(k−2)} has a corner at the zero.
    let mut kinks: Vec<f64> = rep
        .zeros
        .iter()
        .map(|z| match z.contact_order {
            ContactOrder::Fitted(k) if k > 2.5 => {
                let root = 1.0 / (k.round() - 2.0);
                golden_min(|t| w_at(t).powf(root), z.theta - 1e-3, z.theta + 1e-3).0.rem_euclid(TAU)
            }
            _ => z.theta.rem_euclid(TAU),
        })
        .collect();
    for arc in &rep.flat_arcs {
        if arc[1] - arc[0] < TAU {
            kinks.push(arc[0].rem_euclid(TAU));
            kinks.push(arc[1].rem_euclid(TAU));
        }
    }
    kinks.sort_by(f64::total_cmp);
    kinks.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    Ok(kinks)
}

/// [`angular_nodes`] with extra breaks at the kinks (taken mod 2π) and
/// geometric grading towards them from both sides.
pub(crate) fn angular_nodes_graded(lo: f64, hi: f64, count: usize, kinks: &[f64]) -> Vec<(f64, f64)> {
    if kinks.is_empty() {
        return angular_nodes(lo, hi, count);
    }
    let order = (count / ANGULAR_PANELS).max(2);
    let span = hi - lo;
    let breaks: Vec<f64> = (0..=ANGULAR_PANELS)
        .map(|i| lo + span * i as f64 / ANGULAR_PANELS as f64)
        .collect();
    let mut inside = Vec::new();
    for &k in kinks {
        for shift in [-TAU, 0.0, TAU] {
            // Located kinks carry ~1e-8 error; one just outside still bends
            // the integrand at the window edge.
            let x = k + shift;
            if x > lo - KINK_SLACK && x < hi + KINK_SLACK {
                inside.push(x.clamp(lo, hi));
            }
        }
    }
    // A uniform break beside a kink would leave the true kink at the end of
    // an ungraded panel.
    let last = breaks.len() - 1;
    let mut kept: Vec<f64> = breaks
        .iter()
        .enumerate()
        .filter(|&(i, &b)| i == 0 || i == last || inside.iter().all(|k| (b - k).abs() > KINK_SLACK))
        .map(|(_, &b)| b)
        .collect();
    kept.extend(inside.iter().copied());
    let mut breaks = kept;
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * span);
    let is_kink = |x: f64| inside.iter().any(|k| (x - k).abs() <= 1e-12 * span);
    let mut refined = vec![breaks[0]];
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        match (is_kink(a), is_kink(b)) {
            (false, false) => refined.push(b),
            (true, false) => refined.extend(quad::graded_breaks(a, b, KINK_LEVELS).into_iter().skip(1)),
            (false, true) => {
                let mut towards_b = quad::graded_breaks(b, a, KINK_LEVELS);
                towards_b.reverse();
                refined.extend(towards_b.into_iter().skip(1));
            }
            (true, true) => {
                let m = 0.5 * (a + b);
                refined.extend(quad::graded_breaks(a, m, KINK_LEVELS).into_iter().skip(1));
                let mut towards_b = quad::graded_breaks(b, m, KINK_LEVELS);
                towards_b.reverse();
                refined.extend(towards_b.into_iter().skip(1));
            }
        }
    }
    quad::on_breaks(&refined, order)
}

pub(crate) fn radial_nodes(lo: f64, hi: f64, count: usize) -> Vec<(f64, f64)> {
    quad::composite(lo, hi, RADIAL_PANELS, (count / RADIAL_PANELS).max(2))
}

fn sigma_samples(g: &Gauge, nodes: &[(f64, f64)]) -> Result<Vec<SigmaSample>, GaugeError> {
    nodes.par_iter().map(|&(theta, _)| sigma_point(g, theta)).collect()
}

/// Runs `level_value` on successively doubled schemes until two consecutive
/// levels agree.
fn refine(
    scheme: QuadScheme,
    opts: Refinement,
    mut level_value: impl FnMut(usize, usize) -> Result<f64, MeasureError>,
) -> Result<Estimate, MeasureError> {
    scheme.validate()?;
    let (r0, a0) = scheme.level(0);
    let mut prev = level_value(r0, a0)?;
    let mut error = f64::INFINITY;
    for l in 1..=opts.max_levels.max(1) {
        let (r, a) = scheme.level(l);
        let value = level_value(r, a)?;
        error = (value - prev).abs();
        if quad::agrees(value, prev, opts.tol, 0.0) {
            return Ok(Estimate {
                value,
                error,
                converged: true,
            });
        }
        prev = value;
    }
    Ok(Estimate {
        value: prev,
        error,
        converged: false,
    })
}

/// The region {t0 ≤ φ ≤ t1}; `t0 = 0` gives the filled gauge ball.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlaneRegion {
    pub t0: f64,
    pub t1: f64,
}

impl PlaneRegion {
    pub fn new(t0: f64, t1: f64) -> Result<Self, MeasureError> {
        if !(t0 >= 0.0 && t1 > t0 && t1.is_finite()) {
            return Err(MeasureError::BadRange(t0, t1));
        }
        Ok(Self { t0, t1 })
    }
}

/// ∫ f dξ over the region via ξ = tP(θ), dξ = t·(P × P') dt dθ.
pub fn plane_integral(
    f: &(dyn Fn(Vector2<f64>) -> f64 + Sync),
    g: &Gauge,
    region: PlaneRegion,
    scheme: QuadScheme,
    opts: Refinement,
) -> Result<Estimate, MeasureError> {
    g.planar()?;
    refine(scheme, opts, |nr, na| {
        let tn = radial_nodes(region.t0, region.t1, nr);
        let an = angular_nodes(0.0, TAU, na);
        let samples = sigma_samples(g, &an)?;
        let slices: Vec<f64> = an
            .par_iter()
            .zip(samples.par_iter())
            .map(|(&(_, wa), s)| {
                let p = s.point_vec();
                let dp = Vector2::new(s.tangent[0], s.tangent[1]) * s.arc_element;
                let cross = p.x * dp.y - p.y * dp.x;
                wa * cross * quad::integrate(|t| t * f(p * t), &tn)
            })
            .collect();
        Ok(pairwise(&slices))
    })
}

/// ∫_{t0}^{t1} ∫_{Σ_t} f dσ_t/|∇φ| dt, with dσ_t = t·|P'(θ)| dθ.
pub fn coarea_integral(
    f: &(dyn Fn(Vector2<f64>) -> f64 + Sync),
    g: &Gauge,
    region: PlaneRegion,
    scheme: QuadScheme,
    opts: Refinement,
) -> Result<Estimate, MeasureError> {
    g.planar()?;
    refine(scheme, opts, |nr, na| {
        let tn = radial_nodes(region.t0, region.t1, nr);
        let an = angular_nodes(0.0, TAU, na);
        let samples = sigma_samples(g, &an)?;
        let slices: Result<Vec<f64>, MeasureError> = an
            .par_iter()
            .zip(samples.par_iter())
            .map(|(&(_, wa), s)| {
                let p = s.point_vec();
                let grad = g.jet2(p)?.gradient.norm();
                Ok(wa * s.arc_element / grad * quad::integrate(|t| t * f(p * t), &tn))
            })
            .collect();
        Ok(pairwise(&slices?))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ConeSupport {
    /// 0 < t ≤ t_max; `None` truncates where the density envelope allows.
    FullCone { t_max: Option<f64> },
    /// Δ = {1 ≤ φ ≤ 2}.
    Compact,
    /// The cone piece over Δ with its Euclidean surface measure.
    SurfaceMeasure,
}

/// w^e dξ/φ on the full cone, w^e dξ on Δ, or the surface measure of the
/// cone over Δ, in slice form ∫ t^a ∫ h(tP(θ), t) density(θ) dθ dt.
#[derive(Debug, Clone)]
pub struct WeightedConeMeasure {
    pub gauge: Arc<Gauge>,
    pub exponent: f64,
    pub support: ConeSupport,
    pub conv: WeightConvention,
}

impl WeightedConeMeasure {
    pub fn full_cone(gauge: Arc<Gauge>) -> Self {
        Self {
            gauge,
            exponent: 1.0 / 3.0,
            support: ConeSupport::FullCone { t_max: None },
            conv: WeightConvention::default(),
        }
    }

    pub fn compact(gauge: Arc<Gauge>) -> Self {
        Self {
            support: ConeSupport::Compact,
            ..Self::full_cone(gauge)
        }
    }

    pub fn surface(gauge: Arc<Gauge>) -> Self {
        Self {
            exponent: 0.0,
            support: ConeSupport::SurfaceMeasure,
            ..Self::full_cone(gauge)
        }
    }

    pub fn with_exponent(mut self, exponent: f64) -> Self {
        self.exponent = exponent;
        self
    }

    /// Power of t in the slice form.
    pub fn t_power(&self) -> i32 {
        match self.support {
            ConeSupport::FullCone { .. } => 0,
            _ => 1,
        }
    }

    pub fn height_range(&self) -> Option<(f64, f64)> {
        match self.support {
            ConeSupport::FullCone { t_max } => t_max.map(|t| (0.0, t)),
            _ => Some((1.0, 2.0)),
        }
    }

    /// Angular density of the slice form at a sample of Σ.
    pub fn slice_density(&self, s: &SigmaSample) -> Result<f64, GaugeError> {
        let jet = self.gauge.jet2(s.point_vec())?;
        let grad = jet.gradient.norm();
        Ok(match self.support {
            ConeSupport::SurfaceMeasure => (1.0 + grad * grad).sqrt() * s.arc_element / grad,
            _ => {
                let w = weight_from_jet2(jet.value, &jet.gradient, &jet.hessian, self.conv).max(0.0);
                let we = if self.exponent == 0.0 { 1.0 } else { w.powf(self.exponent) };
                we * s.arc_element / grad
            }
        })
    }
}

fn pick_height_range(u: &ConeDensity, mu: &WeightedConeMeasure, q: f64, abs_tol: f64) -> (f64, f64) {
    match mu.height_range() {
        Some(range) => range,
        None => (0.0, u.envelope.truncation(q, mu.t_power(), abs_tol)),
    }
}

/// (∫|u|^q dμ)^{1/q}.
pub fn cone_norm(
    u: &ConeDensity,
    mu: &WeightedConeMeasure,
    q: f64,
    scheme: QuadScheme,
    opts: Refinement,
) -> Result<Estimate, MeasureError> {
    if !(q >= 1.0) {
        return Err(MeasureError::BadExponent(q));
    }
    if u.is_zero() {
        scheme.validate()?;
        return Ok(Estimate {
            value: 0.0,
            error: 0.0,
            converged: true,
        });
    }
    let g = mu.gauge.clone();
    g.planar()?;
    let (th_lo, th_hi) = u.theta_window().unwrap_or((0.0, TAU));
    let a = mu.t_power();

    // Slice mass ∫ density dθ bounds the tail together with the envelope.
    let probe = angular_nodes(th_lo, th_hi, scheme.angular);
    let probe_samples = sigma_samples(&g, &probe)?;
    let mut slice_mass = 0.0;
    for (&(_, w), s) in probe.iter().zip(&probe_samples) {
        slice_mass += w * mu.slice_density(s)?;
    }
    let envelope_mass = slice_mass * u.envelope.mass(q, a);
    let kinks = weight_kinks(mu)?;
    let mut abs_tol = 1e-3 * opts.tol * envelope_mass;

    loop {
        let (t_lo, t_hi) = pick_height_range(u, mu, q, abs_tol / slice_mass.max(f64::MIN_POSITIVE));
        let est = refine(scheme, opts, |nr, na| {
            let tn = radial_nodes(t_lo, t_hi, nr);
            let an = angular_nodes_graded(th_lo, th_hi, na, &kinks);
            let samples = sigma_samples(&g, &an)?;
            let slices: Result<Vec<f64>, MeasureError> = an
                .par_iter()
                .zip(samples.par_iter())
                .map(|(&(_, wa), s)| {
                    let dens = mu.slice_density(s)?;
                    if dens == 0.0 {
                        return Ok(0.0);
                    }
                    let p = s.point_vec();
                    let inner = quad::integrate(|t| u.eval(p * t, t).norm().powf(q) * t.powi(a), &tn);
                    Ok(wa * dens * inner)
                })
                .collect();
            Ok(pairwise(&slices?))
        })?;
        // Re-tighten the truncation once the actual integral is known.
        let needed = 1e-3 * opts.tol * est.value.abs();
        if mu.height_range().is_some() || needed >= abs_tol * 0.999 || needed == 0.0 {
            let value = est.value.max(0.0).powf(1.0 / q);
            let coarse = (est.value - est.error).max(0.0).powf(1.0 / q);
            return Ok(Estimate {
                value,
                error: (value - coarse).abs(),
                converged: est.converged,
            });
        }
        abs_tol = needed;
    }
}

/// Finite list of (|value|, measure) pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledFunction {
    samples: Vec<(f64, f64)>,
}

impl SampledFunction {
    pub fn new(samples: Vec<(f64, f64)>) -> Result<Self, MeasureError> {
        for (index, &(value, measure)) in samples.iter().enumerate() {
            if !value.is_finite() || !(measure > 0.0 && measure.is_finite()) {
                return Err(MeasureError::BadSample { index, value, measure });
            }
        }
        Ok(Self {
            samples: samples.into_iter().map(|(v, m)| (v.abs(), m)).collect(),
        })
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    pub fn total_measure(&self) -> f64 {
        let ms: Vec<f64> = self.samples.iter().map(|s| s.1).collect();
        pairwise(&ms)
    }

    /// Level sets of the decreasing rearrangement: distinct values in
    /// decreasing order with their cumulative measures.
    fn rearranged(&self) -> Vec<(f64, f64)> {
        let mut sorted = self.samples.clone();
        sorted.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.total_cmp(&b.1)));
        let mut levels: Vec<(f64, f64)> = Vec::new();
        let mut cumulative = 0.0;
        for (v, m) in sorted {
            cumulative += m;
            match levels.last_mut() {
                Some(last) if last.0 == v => last.1 = cumulative,
                _ => levels.push((v, cumulative)),
            }
        }
        levels
    }
}

/// ‖f‖_{q,r} = (∫₀^∞ (t^{1/q} f*(t))^r dt/t)^{1/r}; `r = ∞` gives sup t^{1/q} f*(t).
pub fn lorentz_norm(f: &SampledFunction, q: f64, r: f64) -> Result<f64, MeasureError> {
    if !(q >= 1.0) {
        return Err(MeasureError::BadExponent(q));
    }
    if !(r >= 1.0) {
        return Err(MeasureError::BadExponent(r));
    }
    let levels = f.rearranged();
    if r.is_infinite() {
        return Ok(levels
            .iter()
            .map(|&(v, m)| v * m.powf(1.0 / q))
            .fold(0.0, f64::max));
    }
    let ratio = r / q;
    let mut prev = 0.0f64;
    let terms: Vec<f64> = levels
        .iter()
        .map(|&(v, m)| {
            let term = if v == 0.0 {
                0.0
            } else {
                v.powf(r) * (m.powf(ratio) - prev.powf(ratio)) / ratio
            };
            prev = m;
            term
        })
        .collect();
    Ok(pairwise(&terms).powf(1.0 / r))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SublevelBin {
    pub j: i32,
    pub sigma_arclength: f64,
    pub delta_area: f64,
}

/// Dyadic histogram of w over Σ (arclength) and over Δ (area).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SublevelHistogram {
    pub bins: Vec<SublevelBin>,
    /// Mass where w ≤ 0 (flat directions), outside every dyadic bin.
    pub zero_arclength: f64,
    pub zero_area: f64,
    pub nodes: usize,
    pub max_weight: f64,
}

pub const SUBLEVEL_NODES: usize = 1 << 16;

/// Midpoint sampling of Σ with `nodes` rays; Δ_j is the cone over Σ_j
/// between heights 1 and 2, whose area is (3/2)∫ R² dθ.
pub fn sublevel_histogram(g: &Gauge, conv: WeightConvention, nodes: usize) -> Result<SublevelHistogram, MeasureError> {
    g.planar()?;
    let h = TAU / nodes as f64;
    let rows: Result<Vec<(f64, f64, f64)>, MeasureError> = (0..nodes)
        .into_par_iter()
        .map(|i| {
            let s = sigma_point(g, h * (i as f64 + 0.5))?;
            let jet = g.jet2(s.point_vec())?;
            let w = weight_from_jet2(jet.value, &jet.gradient, &jet.hessian, conv);
            Ok((w, s.arc_element * h, 1.5 * s.radius[0] * s.radius[0] * h))
        })
        .collect();
    let rows = rows?;
    let mut bins: BTreeMap<i32, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let (mut zero_arc, mut zero_area) = (Vec::new(), Vec::new());
    let mut max_weight = f64::NEG_INFINITY;
    for &(w, arc, area) in &rows {
        max_weight = max_weight.max(w);
        if w > 0.0 {
            // Values within rounding of 2^j belong to bin j.
            let j = (w.log2() + 1e-12).floor() as i32;
            let entry = bins.entry(j).or_default();
            entry.0.push(arc);
            entry.1.push(area);
        } else {
            zero_arc.push(arc);
            zero_area.push(area);
        }
    }
    Ok(SublevelHistogram {
        bins: bins
            .into_iter()
            .map(|(j, (arcs, areas))| SublevelBin {
                j,
                sigma_arclength: pairwise(&arcs),
                delta_area: pairwise(&areas),
            })
            .collect(),
        zero_arclength: pairwise(&zero_arc),
        zero_area: pairwise(&zero_area),
        nodes,
        max_weight,
    })
}

impl SublevelHistogram {
    pub fn total_arclength(&self) -> f64 {
        let mut parts: Vec<f64> = self.bins.iter().map(|b| b.sigma_arclength).collect();
        parts.push(self.zero_arclength);
        pairwise(&parts)
    }

    pub fn arclength(&self, j: i32) -> f64 {
        self.bins.iter().find(|b| b.j == j).map_or(0.0, |b| b.sigma_arclength)
    }

    /// Fit of log₂ σ(Σ_j) against j over the `count` highest complete bins.
    /// The bin holding max w is cut off by the maximum and is skipped.
    pub fn slope_fit(&self, count: usize) -> Option<LinearFit> {
        let top = (self.max_weight.log2() + 1e-12).floor() as i32;
        let chosen: Vec<&SublevelBin> = self
            .bins
            .iter()
            .rev()
            .filter(|b| b.j < top && b.sigma_arclength > 0.0)
            .take(count)
            .collect();
        if chosen.len() < 2 {
            return None;
        }
        let xs: Vec<f64> = chosen.iter().map(|b| b.j as f64).collect();
        let ys: Vec<f64> = chosen.iter().map(|b| b.sigma_arclength.log2()).collect();
        linear_fit(&xs, &ys)
    }
}

/// Arclength of Σ_j = {2^j ≤ w < 2^{j+1}} on 2^16 rays.
pub fn sublevel_measure(g: &Gauge, j: i32, conv: WeightConvention) -> Result<f64, MeasureError> {
    Ok(sublevel_histogram(g, conv, SUBLEVEL_NODES)?.arclength(j))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extension::{ConeDensity, Envelope};
    use crate::gauge::{make_gauge, GaugeSpec};
    use num_complex::Complex64;
    use std::f64::consts::PI;

    fn gauge(spec: GaugeSpec) -> Gauge {
        make_gauge(spec).unwrap()
    }

    fn shoelace_area(g: &Gauge, n: usize) -> f64 {
        let pts: Vec<Vector2<f64>> = (0..n)
            .map(|i| {
                let th = TAU * i as f64 / n as f64;
                let u = Vector2::new(th.cos(), th.sin());
                u / g.value2(u).unwrap()
            })
            .collect();
        let terms: Vec<f64> = (0..n)
            .map(|i| {
                let (a, b) = (pts[i], pts[(i + 1) % n]);
                a.x * b.y - b.x * a.y
            })
            .collect();
        0.5 * pairwise(&terms)
    }

    #[test]
    fn plane_integral_examples() {
        let c = gauge(GaugeSpec::circle());
        let opts = Refinement::default();
        let annulus = plane_integral(&|_| 1.0, &c, PlaneRegion::new(1.0, 2.0).unwrap(), QuadScheme::default(), opts).unwrap();
        assert!(annulus.converged && (annulus.value - 3.0 * PI).abs() < 1e-10);
        let gauss = plane_integral(
            &|x| (-PI * x.norm_squared()).exp(),
            &c,
            PlaneRegion::new(0.0, 6.0).unwrap(),
            QuadScheme::default(),
            opts,
        )
        .unwrap();
        assert!((gauss.value - 1.0).abs() < 1e-8, "{gauss:?}");
        let s4 = gauge(GaugeSpec::superellipse(4));
        let area = plane_integral(&|_| 1.0, &s4, PlaneRegion::new(1.0, 2.0).unwrap(), QuadScheme::default(), opts).unwrap();
        let oracle = 3.0 * shoelace_area(&s4, 1 << 16);
        assert!((area.value - oracle).abs() < 1e-6 * oracle);
    }

    #[test]
    fn coarea_examples() {
        let c = gauge(GaugeSpec::circle());
        let opts = Refinement::default();
        let gauss = coarea_integral(
            &|x| (-PI * x.norm_squared()).exp(),
            &c,
            PlaneRegion::new(0.0, 6.0).unwrap(),
            QuadScheme::default(),
            opts,
        )
        .unwrap();
        assert!((gauss.value - 1.0).abs() < 1e-6);
        let ann = coarea_integral(&|_| 1.0, &c, PlaneRegion::new(1.0, 2.0).unwrap(), QuadScheme::default(), opts).unwrap();
        assert!((ann.value - 3.0 * PI).abs() < 1e-8);
        let s4 = gauge(GaugeSpec::superellipse(4));
        let region = PlaneRegion::new(1.0, 2.0).unwrap();
        let a = coarea_integral(&|_| 1.0, &s4, region, QuadScheme::default(), opts).unwrap();
        let b = plane_integral(&|_| 1.0, &s4, region, QuadScheme::default(), opts).unwrap();
        assert!((a.value - b.value).abs() < 1e-6 * b.value);
    }

    #[test]
    fn rejects_coarse_schemes() {
        let c = gauge(GaugeSpec::circle());
        let r = plane_integral(
            &|_| 1.0,
            &c,
            PlaneRegion::new(1.0, 2.0).unwrap(),
            QuadScheme { radial: 8, angular: 64 },
            Refinement::default(),
        );
        assert!(matches!(r, Err(MeasureError::TooFewNodes { .. })));
    }

    #[test]
    fn cone_norm_examples() {
        let c = Arc::new(gauge(GaugeSpec::circle()));
        let opts = Refinement { tol: 1e-10, max_levels: 6 };
        let one = ConeDensity::from_height(Envelope::Compact { t_max: 2.0, bound: 1.0 }, |_| Complex64::new(1.0, 0.0));
        let mu = WeightedConeMeasure::compact(c.clone());
        let v = cone_norm(&one, &mu, 1.0, QuadScheme::default(), opts).unwrap();
        assert!((v.value - 3.0 * PI).abs() < 1e-8);
        let z = cone_norm(&ConeDensity::zero(), &mu, 2.0, QuadScheme::default(), opts).unwrap();
        assert_eq!(z.value, 0.0);
        let e = ConeDensity::from_height(Envelope::Exponential { amplitude: 1.0, rate: 1.0 }, |t| {
            Complex64::new((-t).exp(), 0.0)
        });
        let full = WeightedConeMeasure::full_cone(c.clone());
        let v = cone_norm(&e, &full, 1.0, QuadScheme::default(), Refinement { tol: 1e-9, max_levels: 6 }).unwrap();
        assert!((v.value - TAU).abs() < 1e-6, "{v:?}");
        assert!(matches!(
            cone_norm(&e, &full, 0.5, QuadScheme::default(), opts),
            Err(MeasureError::BadExponent(_))
        ));
    }

    #[test]
    fn lorentz_examples() {
        let f = SampledFunction::new(vec![(2.0, 0.5), (1.0, 1.5), (3.0, 0.25)]).unwrap();
        for q in [1.0, 1.5, 3.0] {
            let direct: f64 = f.samples().iter().map(|(v, m)| v.powf(q) * m).sum::<f64>().powf(1.0 / q);
            let lor = lorentz_norm(&f, q, q).unwrap();
            assert!((lor - direct).abs() <= 1e-14 * direct);
        }
        let ind = SampledFunction::new(vec![(1.0, 0.7), (1.0, 1.3)]).unwrap();
        let (q, r) = (2.0, 3.0);
        let lor = lorentz_norm(&ind, q, r).unwrap();
        let exact = (q / r).powf(1.0 / r) * 2f64.powf(1.0 / q);
        assert!((lor - exact).abs() < 1e-14);
        assert!(matches!(lorentz_norm(&ind, 0.9, 2.0), Err(MeasureError::BadExponent(_))));
        assert!(SampledFunction::new(vec![(1.0, 0.0)]).is_err());
    }

    #[test]
    fn weak_norm_of_power_law() {
        // ‖s^{-1/2}‖ in L^{2,∞}(ℝ₊) on a log grid over [1e-6, 1e6].
        let n = 1 << 14;
        let (lo, hi): (f64, f64) = (1e-6, 1e6);
        let edges: Vec<f64> = (0..=n).map(|i| lo * (hi / lo).powf(i as f64 / n as f64)).collect();
        let samples: Vec<(f64, f64)> = edges
            .windows(2)
            .map(|e| ((e[0] * e[1]).sqrt().powf(-0.5), e[1] - e[0]))
            .collect();
        let f = SampledFunction::new(samples).unwrap();
        let weak = lorentz_norm(&f, 2.0, f64::INFINITY).unwrap();
        assert!((weak - 1.0).abs() < 1e-3, "{weak}");
    }

    #[test]
    fn sublevel_circle() {
        let c = gauge(GaugeSpec::circle());
        let h = sublevel_histogram(&c, WeightConvention::default(), 4096).unwrap();
        assert_eq!(h.bins.len(), 1);
        assert_eq!(h.bins[0].j, 0);
        assert!((h.bins[0].sigma_arclength - TAU).abs() < 1e-10);
        assert!((h.bins[0].delta_area - 3.0 * PI).abs() < 1e-10);
    }

    #[test]
    fn sublevel_slopes() {
        for (k, target) in [(4u32, 0.5), (6, 0.25)] {
            let g = gauge(GaugeSpec::superellipse(k));
            let h = sublevel_histogram(&g, WeightConvention::default(), SUBLEVEL_NODES).unwrap();
            let fit = h.slope_fit(10).unwrap();
            assert!((fit.slope - target).abs() <= 0.1 * target, "k = {k}: {}", fit.slope);
        }
    }
}
