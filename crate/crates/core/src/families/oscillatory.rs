//! One-sided oscillatory integrals ∫₀^∞ e^{2πis(t + cαt^k)} t^{−1/q'} dt and
//! their stationary-phase anatomy.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::extension::dual_exponent;
use crate::fit::{least_squares, linear_fit};
use crate::quad::{self, gl_rule};
use crate::sum::pairwise_complex;

use super::FamilyError;

/// Target relative accuracy of each regularization.
pub const INNER_TOL: f64 = 1e-11;
/// Allowed disagreement between the two regularizations.
pub const AGREEMENT_TOL: f64 = 1e-5;
const NODES_PER_PERIOD: f64 = 10.0;
const ORDER: usize = 16;
const GRADED_LEVELS: usize = 40;

/// Sign of the phase: `Positive` is e^{+2πis(…)}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseSign {
    Positive,
    Negative,
}

impl PhaseSign {
    pub fn value(self) -> f64 {
        match self {
            PhaseSign::Positive => 1.0,
            PhaseSign::Negative => -1.0,
        }
    }
}

/// ψ(z) = scale·P(z) with P(z) = z + Σ e_j z^j, every e_j ≤ 0 and j ≥ 2.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct PolyPhase {
    pub scale: f64,
    pub terms: Vec<(i32, f64)>,
}

impl PolyPhase {
    pub fn new(scale: f64, terms: Vec<(i32, f64)>) -> Result<Self, FamilyError> {
        if !(scale.is_finite() && scale != 0.0) {
            return Err(FamilyError::BadParameter(format!("phase scale {scale}")));
        }
        let terms: Vec<(i32, f64)> = terms.into_iter().filter(|&(_, e)| e != 0.0).collect();
        if terms.is_empty() || terms.iter().any(|&(j, e)| j < 2 || !(e < 0.0) || !e.is_finite()) {
            return Err(FamilyError::BadParameter(format!("phase terms {terms:?} must be negative, degree >= 2")));
        }
        Ok(Self { scale, terms })
    }

    /// P(t₀ + w) − P(t₀) by binomial expansion, free of cancellation in w.
    fn p_shift(&self, t0: f64, w: Complex64) -> Complex64 {
        let mut acc = w;
        for &(j, e) in &self.terms {
            let mut binom = 1.0;
            let mut wp = Complex64::new(1.0, 0.0);
            let mut sum = Complex64::new(0.0, 0.0);
            for i in 1..=j {
                binom = binom * (j - i + 1) as f64 / i as f64;
                wp *= w;
                sum += wp * (binom * t0.powi(j - i));
            }
            acc += sum * e;
        }
        acc
    }

    fn p_real(&self, t: f64) -> f64 {
        self.terms.iter().fold(t, |acc, &(j, e)| acc + e * t.powi(j))
    }

    fn dp(&self, t: f64) -> f64 {
        self.terms.iter().fold(1.0, |acc, &(j, e)| acc + e * j as f64 * t.powi(j - 1))
    }

    fn degree(&self) -> i32 {
        self.terms.iter().map(|&(j, _)| j).max().unwrap_or(1)
    }

    /// The unique positive zero of P', where P' decreases strictly from 1.
    fn critical_point(&self) -> f64 {
        let mut hi = 1.0;
        while self.dp(hi) > 0.0 {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.dp(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    /// Direction in which every term of e^{iψ} decays beyond the critical point.
    fn ray_angle(&self) -> f64 {
        -self.scale.signum() * PI / (2.0 * self.degree() as f64)
    }
}

type Amplitude<'a> = &'a (dyn Fn(Complex64) -> Complex64 + Sync);

fn relative_gap(a: Complex64, b: Complex64, floor: f64) -> f64 {
    (a - b).norm() / a.norm().max(floor)
}

/// ∫₀^T e^{iψ(t)} t^{−β} a(t) dt through t = T x^m, m = 1/(1−β), which
/// absorbs the endpoint singularity.
pub(crate) fn head_integral(phase: &PolyPhase, beta: f64, amp: Amplitude, upper: f64) -> (Complex64, bool) {
    let m = 1.0 / (1.0 - beta);
    let integrand = |x: f64| {
        let t = upper * x.powf(m);
        Complex64::from_polar(1.0, phase.scale * phase.p_real(t)) * amp(Complex64::new(t, 0.0))
    };
    // Total phase variation fixes the panel count.
    let probe = 4096;
    let mut variation = 0.0;
    let mut prev = 0.0;
    for i in 1..=probe {
        let t = upper * (i as f64 / probe as f64).powf(m);
        let v = phase.scale * phase.p_real(t);
        variation += (v - prev).abs();
        prev = v;
    }
    let mut panels = ((variation / TAU) * NODES_PER_PERIOD / ORDER as f64).ceil() as usize + 4;
    let prefactor = upper.powf(1.0 - beta) * m;
    let eval = |panels: usize| {
        let mut breaks = quad::graded_breaks(0.0, 1.0 / panels as f64, GRADED_LEVELS);
        breaks.extend((2..=panels).map(|i| i as f64 / panels as f64));
        let nodes = quad::on_breaks(&breaks, ORDER);
        let terms: Vec<Complex64> = nodes.par_iter().map(|&(x, w)| integrand(x) * w).collect();
        pairwise_complex(&terms) * prefactor
    };
    let mut coarse = eval(panels);
    for _ in 0..8 {
        panels *= 2;
        let fine = eval(panels);
        if relative_gap(fine, coarse, prefactor * 1e-3) <= INNER_TOL {
            return (fine, true);
        }
        coarse = fine;
    }
    (coarse, false)
}

/// ∫ along z = t₀ + r e^{iφ}, r ≥ 0, of e^{iψ(z)} z^{−β} a(z) dz; t₀ must lie
/// beyond the critical point so that the integrand decays from the start.
pub(crate) fn ray_integral(phase: &PolyPhase, beta: f64, amp: Amplitude, t0: f64) -> (Complex64, bool) {
    let phi = phase.ray_angle();
    let dir = Complex64::from_polar(1.0, phi);
    let base = Complex64::from_polar(1.0, phase.scale * phase.p_real(t0));
    let integrand = |r: f64| {
        let w = dir * r;
        let z = t0 + w;
        (Complex64::i() * phase.scale * phase.p_shift(t0, w)).exp() * base * z.powf(-beta) * amp(z) * dir
    };
    let rate = (phase.scale * phase.dp(t0)).abs() * phi.sin().abs();
    let start = integrand(0.0).norm();
    let run = |order: usize| {
        let rule = gl_rule(order);
        let mut h = 0.25 / rate.max(1e-300);
        let mut lo = 0.0;
        let mut terms = Vec::new();
        for _ in 0..400 {
            let hi = lo + h;
            let half = 0.5 * h;
            let mid = lo + half;
            let mut panel_max: f64 = 0.0;
            for &(x, w) in rule.iter() {
                let v = integrand(mid + half * x);
                panel_max = panel_max.max(v.norm());
                terms.push(v * (half * w));
            }
            let tail = integrand(hi).norm();
            if tail <= 1e-18 * start && panel_max <= 1e-16 * start {
                return (pairwise_complex(&terms), true);
            }
            lo = hi;
            h *= 1.3;
        }
        (pairwise_complex(&terms), false)
    };
    let (coarse, ok1) = run(ORDER);
    let (fine, ok2) = run(ORDER + 8);
    let floor = start / rate.max(1e-300);
    (fine, ok1 && ok2 && relative_gap(fine, coarse, floor) <= INNER_TOL)
}

/// ∫₀^U e^{iψ(t)} t^{−β} a(t) dt with U = ∞ allowed: real-axis head up to
/// twice the critical point, then rotated rays.
pub(crate) fn contour_integral(phase: &PolyPhase, beta: f64, amp: Amplitude, upper: f64) -> (Complex64, bool) {
    let split = 2.0 * phase.critical_point();
    if upper <= split {
        return head_integral(phase, beta, amp, upper);
    }
    let (head, ok_h) = head_integral(phase, beta, amp, split);
    let (ray, ok_r) = ray_integral(phase, beta, amp, split);
    if upper.is_infinite() {
        return (head + ray, ok_h && ok_r);
    }
    let (end_ray, ok_e) = ray_integral(phase, beta, amp, upper);
    (head + ray - end_ray, ok_h && ok_r && ok_e)
}

/// Wynn's ε-algorithm on a sequence of partial sums; returns the even-column
/// estimate that moved least from its predecessor, with that change.
pub fn wynn_epsilon(partial: &[Complex64]) -> (Complex64, f64) {
    let n = partial.len();
    if n < 3 {
        let last = partial.last().copied().unwrap_or_default();
        return (last, f64::INFINITY);
    }
    let mut prev: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); n + 1];
    let mut cur: Vec<Complex64> = partial.to_vec();
    let mut estimates = vec![*partial.last().expect("non-empty")];
    let mut column = 0;
    while cur.len() > 1 {
        let mut next = Vec::with_capacity(cur.len() - 1);
        for i in 0..cur.len() - 1 {
            let diff = cur[i + 1] - cur[i];
            let p = if column == 0 { Complex64::new(0.0, 0.0) } else { prev[i + 1] };
            if diff.norm() == 0.0 {
                next.push(Complex64::new(f64::INFINITY, 0.0));
            } else {
                next.push(p + diff.inv());
            }
        }
        column += 1;
        prev = cur;
        cur = next;
        if column % 2 == 0 {
            if let Some(&v) = cur.last() {
                if v.re.is_finite() && v.im.is_finite() {
                    estimates.push(v);
                } else {
                    break;
                }
            }
        }
    }
    if estimates.len() == 1 {
        return (estimates[0], (partial[n - 1] - partial[n - 2]).norm());
    }
    // Deep columns amplify rounding; keep the column that moved least.
    estimates
        .windows(2)
        .map(|w| (w[1], (w[1] - w[0]).norm()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("two estimates")
}

/// Φ(σ) = (σ+1) − (σ+1)^k/k.
pub fn compact_phase(k: u32, sigma: f64) -> f64 {
    let y = sigma + 1.0;
    y - y.powi(k as i32) / k as f64
}

fn compact_phase_prime(k: u32, sigma: f64) -> f64 {
    1.0 - (sigma + 1.0).powi(k as i32 - 1)
}

/// Smallest σ > from with Φ(from) − Φ(σ) = target (Φ decreasing on σ > 0).
fn phase_drop(k: u32, from: f64, target: f64) -> f64 {
    let f0 = compact_phase(k, from);
    let h = |s: f64| f0 - compact_phase(k, s) - target;
    let mut lo = from;
    let mut hi = from + 1.0;
    while h(hi) < 0.0 {
        lo = hi;
        hi = from + 2.0 * (hi - from);
    }
    let mut x = hi;
    for _ in 0..100 {
        // Newton from the right of a convex increasing function stays right.
        let step = h(x) / -compact_phase_prime(k, x);
        let nx = x - step;
        if !(nx > lo && nx <= hi) {
            x = 0.5 * (lo + hi);
        } else {
            x = nx;
        }
        let v = h(x);
        if v > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        if step.abs() <= 1e-15 * x.abs().max(1.0) || hi - lo <= 1e-15 * hi.abs().max(1.0) {
            break;
        }
    }
    x
}

/// Parameters of the compact-phase form g = t*^{1/q}·∫_{−1}^∞ e^{iλΦ(σ)} (σ+1)^{−1/q'} dσ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CompactForm {
    pub t_star: f64,
    pub lambda: f64,
    pub prefactor: f64,
    pub beta: f64,
}

impl CompactForm {
    pub fn new(alpha: f64, s: f64, k: u32, q: f64, c: f64) -> Result<Self, FamilyError> {
        validate_g_args(alpha, s, k, q, c)?;
        let t_star = (-1.0 / (k as f64 * c * alpha)).powf(1.0 / (k as f64 - 1.0));
        let beta = 1.0 / dual_exponent(q);
        Ok(Self {
            t_star,
            lambda: TAU * s * t_star,
            prefactor: t_star.powf(1.0 - beta),
            beta,
        })
    }
}

fn validate_g_args(alpha: f64, s: f64, k: u32, q: f64, c: f64) -> Result<(), FamilyError> {
    if k < 3 {
        return Err(FamilyError::BadParameter(format!("k = {k} must be >= 3")));
    }
    if !(c < 0.0 && c.is_finite()) {
        return Err(FamilyError::BadParameter(format!("c = {c} must be negative")));
    }
    if !(alpha > 0.0 && alpha.is_finite() && s > 0.0 && s.is_finite()) {
        return Err(FamilyError::BadParameter(format!("alpha = {alpha}, s = {s} must be positive")));
    }
    if !(q > 1.0 && q.is_finite()) {
        return Err(FamilyError::BadExponent(format!("q = {q} must lie in (1, inf)")));
    }
    Ok(())
}

/// Head ∫_{lo}^{hi} e^{iλΦ}(σ+1)^{−β} w(σ) dσ for −1 ≤ lo < hi ≤ 0 via
/// σ + 1 = x^m.
fn compact_head(k: u32, form: &CompactForm, sign: f64, lo: f64, hi: f64, window: &(dyn Fn(f64) -> f64 + Sync)) -> Complex64 {
    let m = 1.0 / (1.0 - form.beta);
    let x_lo = (lo + 1.0).max(0.0).powf(1.0 / m);
    let x_hi = (hi + 1.0).powf(1.0 / m);
    let integrand = |x: f64| {
        let sigma = x.powf(m) - 1.0;
        Complex64::from_polar(window(sigma), sign * form.lambda * compact_phase(k, sigma)) * m
    };
    let periods = form.lambda * (1.0 - 1.0 / k as f64) / TAU;
    let mut panels = (periods * NODES_PER_PERIOD / ORDER as f64).ceil() as usize + 4;
    let eval = |panels: usize| {
        let h = (x_hi - x_lo) / panels as f64;
        let mut breaks = if x_lo == 0.0 {
            quad::graded_breaks(0.0, h, GRADED_LEVELS)
        } else {
            vec![x_lo, x_lo + h]
        };
        breaks.extend((2..=panels).map(|i| x_lo + h * i as f64));
        quad::integrate_complex(integrand, &quad::on_breaks(&breaks, ORDER))
    };
    let mut coarse = eval(panels);
    for _ in 0..8 {
        panels *= 2;
        let fine = eval(panels);
        if relative_gap(fine, coarse, 1e-3) <= INNER_TOL {
            return fine;
        }
        coarse = fine;
    }
    coarse
}

/// Smooth piece ∫_{lo}^{hi} e^{iλΦ}(σ+1)^{−β} w(σ) dσ with lo > −1.
fn compact_segment(k: u32, form: &CompactForm, sign: f64, lo: f64, hi: f64, window: &(dyn Fn(f64) -> f64 + Sync)) -> Complex64 {
    let integrand = |sigma: f64| {
        Complex64::from_polar(
            window(sigma) * (sigma + 1.0).powf(-form.beta),
            sign * form.lambda * compact_phase(k, sigma),
        )
    };
    let top = compact_phase(k, 0.0f64.clamp(lo, hi));
    let variation = (top - compact_phase(k, lo)).abs() + (top - compact_phase(k, hi)).abs();
    let periods = form.lambda * variation.max(hi - lo) / TAU;
    let mut panels = (periods * NODES_PER_PERIOD / ORDER as f64).ceil() as usize + 4;
    let mut coarse = quad::integrate_complex(integrand, &quad::composite(lo, hi, panels, ORDER));
    for _ in 0..8 {
        panels *= 2;
        let fine = quad::integrate_complex(integrand, &quad::composite(lo, hi, panels, ORDER));
        if relative_gap(fine, coarse, 1e-3) <= INNER_TOL {
            return fine;
        }
        coarse = fine;
    }
    coarse
}

const TAIL_PIECES: usize = 64;
/// Accepted change between the last two accelerated estimates.
const TAIL_TOL: f64 = 1e-9;

/// ∫_{from}^∞ e^{iλΦ}(σ+1)^{−β} dσ for from ≥ 0, summed over half-periods of
/// the monotone phase and accelerated by the ε-algorithm.
fn compact_tail(k: u32, form: &CompactForm, sign: f64, from: f64) -> (Complex64, bool) {
    let rule = gl_rule(24);
    let mut partial = Vec::with_capacity(TAIL_PIECES);
    let mut acc = Complex64::new(0.0, 0.0);
    let mut lo = from;
    for n in 1..=TAIL_PIECES {
        let hi = phase_drop(k, from, n as f64 * PI / form.lambda);
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        let terms: Vec<Complex64> = rule
            .iter()
            .map(|&(x, w)| {
                let sigma = mid + half * x;
                Complex64::from_polar((sigma + 1.0).powf(-form.beta), sign * form.lambda * compact_phase(k, sigma))
                    * (half * w)
            })
            .collect();
        acc += pairwise_complex(&terms);
        partial.push(acc);
        lo = hi;
    }
    let (value, change) = wynn_epsilon(&partial);
    (value, change <= TAIL_TOL * value.norm().max(1e-3))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GValue {
    pub re: f64,
    pub im: f64,
    /// Compact-phase form with accelerated half-period tail.
    pub compact_phase: [f64; 2],
    /// Real head plus rotated far-field ray.
    pub rotated_ray: [f64; 2],
    pub discrepancy: f64,
    pub converged: bool,
}

impl GValue {
    pub fn value(&self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }

    pub fn abs(&self) -> f64 {
        self.value().norm()
    }
}

/// g via Φ-substitution and Wynn acceleration.
pub fn g_compact_phase(alpha: f64, s: f64, k: u32, q: f64, c: f64, sign: PhaseSign) -> Result<(Complex64, bool), FamilyError> {
    let form = CompactForm::new(alpha, s, k, q, c)?;
    let sg = sign.value();
    let head = compact_head(k, &form, sg, -1.0, 0.0, &|_| 1.0);
    let (tail, ok) = compact_tail(k, &form, sg, 0.0);
    Ok(((head + tail) * form.prefactor, ok))
}

/// g via contour rotation of the monotone far field.
pub fn g_rotated_ray(alpha: f64, s: f64, k: u32, q: f64, c: f64, sign: PhaseSign) -> Result<(Complex64, bool), FamilyError> {
    validate_g_args(alpha, s, k, q, c)?;
    let phase = PolyPhase::new(sign.value() * TAU * s, vec![(k as i32, c * alpha)])?;
    let beta = 1.0 / dual_exponent(q);
    Ok(contour_integral(&phase, beta, &|_| Complex64::new(1.0, 0.0), f64::INFINITY))
}

/// g(α, s) = ∫₀^∞ e^{±2πis(t + cαt^k)} t^{−1/q'} dt by two independent
/// regularizations; unconverged when they disagree beyond [`AGREEMENT_TOL`].
pub fn oscillatory_g(alpha: f64, s: f64, k: u32, q: f64, c: f64, sign: PhaseSign) -> Result<GValue, FamilyError> {
    let (a, ok_a) = g_compact_phase(alpha, s, k, q, c, sign)?;
    let (b, ok_b) = g_rotated_ray(alpha, s, k, q, c, sign)?;
    let discrepancy = (a - b).norm() / b.norm().max(f64::MIN_POSITIVE);
    Ok(GValue {
        re: b.re,
        im: b.im,
        compact_phase: [a.re, a.im],
        rotated_ray: [b.re, b.im],
        discrepancy,
        converged: ok_a && ok_b && discrepancy <= AGREEMENT_TOL,
    })
}

/// β = 1 on |σ| ≤ η, 0 on |σ| ≥ 2η, smooth in between.
pub fn cutoff(eta: f64, sigma: f64) -> f64 {
    let x = (2.0 * eta - sigma.abs()) / eta;
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let a = (-1.0 / x).exp();
    let b = (-1.0 / (1.0 - x)).exp();
    a / (a + b)
}

pub const DEFAULT_ETA: f64 = 0.25;

/// The compact-phase integral split by the cutoff β.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThreePieces {
    pub lambda: f64,
    pub near: [f64; 2],
    pub left: [f64; 2],
    pub right: [f64; 2],
    /// |near + left + right − whole| / |whole|.
    pub partition_residual: f64,
    pub converged: bool,
}

impl ThreePieces {
    pub fn near_abs(&self) -> f64 {
        Complex64::new(self.near[0], self.near[1]).norm()
    }

    pub fn left_abs(&self) -> f64 {
        Complex64::new(self.left[0], self.left[1]).norm()
    }

    pub fn right_abs(&self) -> f64 {
        Complex64::new(self.right[0], self.right[1]).norm()
    }
}

pub fn three_pieces(alpha: f64, s: f64, k: u32, q: f64, c: f64, eta: f64) -> Result<ThreePieces, FamilyError> {
    if !(eta > 0.0 && eta < 0.5) {
        return Err(FamilyError::BadParameter(format!("eta = {eta} outside (0, 1/2)")));
    }
    let form = CompactForm::new(alpha, s, k, q, c)?;
    let near = compact_segment(k, &form, 1.0, -2.0 * eta, 2.0 * eta, &|x| cutoff(eta, x));
    let left = compact_head(k, &form, 1.0, -1.0, -eta, &|x| 1.0 - cutoff(eta, x));
    let right_head = compact_segment(k, &form, 1.0, eta, 2.0 * eta, &|x| 1.0 - cutoff(eta, x));
    let (right_tail, ok_r) = compact_tail(k, &form, 1.0, 2.0 * eta);
    let right = right_head + right_tail;
    let whole_head = compact_head(k, &form, 1.0, -1.0, 0.0, &|_| 1.0);
    let (whole_tail, ok_w) = compact_tail(k, &form, 1.0, 0.0);
    let whole = whole_head + whole_tail;
    Ok(ThreePieces {
        lambda: form.lambda,
        near: [near.re, near.im],
        left: [left.re, left.im],
        right: [right.re, right.im],
        partition_residual: (near + left + right - whole).norm() / whole.norm(),
        converged: ok_r && ok_w,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GRow {
    pub alpha: f64,
    pub s: f64,
    pub g: GValue,
    pub pieces: ThreePieces,
    /// |t*^{1/q}·near|, the stationary contribution alone.
    pub near_contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryPhaseReport {
    pub k: u32,
    pub q: f64,
    pub oracle_slope: f64,
    pub fitted_slope: f64,
    /// RMS residual of the pooled log-log fit.
    pub fit_rms: f64,
    pub fit_rejected: bool,
    pub slope_within_tolerance: bool,
    /// α-slope of the stationary piece alone.
    pub near_slope: f64,
    pub partition_residual: f64,
    /// min |near|·λ^{1/2}.
    pub near_lower: f64,
    /// max |left|·λ^{1−1/q'}.
    pub left_upper: f64,
    /// max |right|·λ.
    pub right_upper: f64,
    pub rows: Vec<GRow>,
}

pub const SLOPE_TOL: f64 = 0.15;

/// The α-exponent predicted for |g|: −(1/(k−1))(1/2 − 1/q').
pub fn stationary_slope(k: u32, q: f64) -> f64 {
    -(1.0 / (k as f64 - 1.0)) * (0.5 - 1.0 / dual_exponent(q))
}

/// Pooled fit log|g| = a·log α + b_s over the grid, plus the piecewise
/// magnitudes relative to their predicted λ-powers.
pub fn stationary_phase_check(k: u32, q: f64, c: f64, alpha_grid: &[f64], s_grid: &[f64]) -> Result<StationaryPhaseReport, FamilyError> {
    if alpha_grid.len() < 2 || s_grid.is_empty() {
        return Err(FamilyError::BadParameter("need >= 2 alpha values and >= 1 s value".into()));
    }
    let points: Vec<(usize, f64, f64)> = s_grid
        .iter()
        .enumerate()
        .flat_map(|(i, &s)| alpha_grid.iter().map(move |&a| (i, a, s)))
        .collect();
    let rows: Result<Vec<(usize, GRow)>, FamilyError> = points
        .par_iter()
        .map(|&(i, alpha, s)| {
            let g = oscillatory_g(alpha, s, k, q, c, PhaseSign::Positive)?;
            let pieces = three_pieces(alpha, s, k, q, c, DEFAULT_ETA)?;
            let form = CompactForm::new(alpha, s, k, q, c)?;
            Ok((
                i,
                GRow {
                    alpha,
                    s,
                    g,
                    pieces,
                    near_contribution: form.prefactor * pieces.near_abs(),
                },
            ))
        })
        .collect();
    let rows = rows?;
    let ns = s_grid.len();
    let design = |group: usize, alpha: f64| {
        let mut r = vec![0.0; ns + 1];
        r[0] = alpha.ln();
        r[group + 1] = 1.0;
        r
    };
    let dm: Vec<Vec<f64>> = rows.iter().map(|(i, r)| design(*i, r.alpha)).collect();
    let ys: Vec<f64> = rows.iter().map(|(_, r)| r.g.abs().ln()).collect();
    let (coef, rms) = least_squares(&dm, &ys).ok_or(FamilyError::FitRejected("singular pooled fit".into()))?;
    let ys_near: Vec<f64> = rows.iter().map(|(_, r)| r.near_contribution.ln()).collect();
    let (coef_near, _) = least_squares(&dm, &ys_near).ok_or(FamilyError::FitRejected("singular near fit".into()))?;
    let oracle = stationary_slope(k, q);
    let beta = 1.0 / dual_exponent(q);
    let mut near_lower = f64::INFINITY;
    let mut left_upper: f64 = 0.0;
    let mut right_upper: f64 = 0.0;
    let mut partition: f64 = 0.0;
    for (_, r) in &rows {
        let l = r.pieces.lambda;
        near_lower = near_lower.min(r.pieces.near_abs() * l.sqrt());
        left_upper = left_upper.max(r.pieces.left_abs() * l.powf(1.0 - beta));
        right_upper = right_upper.max(r.pieces.right_abs() * l);
        partition = partition.max(r.pieces.partition_residual);
    }
    let fitted = coef[0];
    Ok(StationaryPhaseReport {
        k,
        q,
        oracle_slope: oracle,
        fitted_slope: fitted,
        fit_rms: rms,
        fit_rejected: rms > SLOPE_TOL,
        slope_within_tolerance: (fitted - oracle).abs() <= SLOPE_TOL * oracle.abs(),
        near_slope: coef_near[0],
        partition_residual: partition,
        near_lower,
        left_upper,
        right_upper,
        rows: rows.into_iter().map(|(_, r)| r).collect(),
    })
}

/// (max − min)/min of |g(α, s)|·s^{1/2} over the s grid.
pub fn s_variation(alpha: f64, s_grid: &[f64], k: u32, q: f64, c: f64) -> Result<f64, FamilyError> {
    let vals: Result<Vec<f64>, FamilyError> = s_grid
        .par_iter()
        .map(|&s| Ok(oscillatory_g(alpha, s, k, q, c, PhaseSign::Positive)?.abs() * s.sqrt()))
        .collect();
    let vals = vals?;
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(0.0, f64::max);
    Ok((hi - lo) / lo)
}

/// Geometric grid of `n` points from `lo` to `hi` inclusive.
pub fn geometric_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let r = (hi / lo).ln() / (n - 1) as f64;
    (0..n).map(|i| if i + 1 == n { hi } else { lo * (r * i as f64).exp() }).collect()
}

/// Slope of log|g| against log α at one s; used for quick diagnostics.
pub fn alpha_slope_at(s: f64, alpha_grid: &[f64], k: u32, q: f64, c: f64) -> Result<f64, FamilyError> {
    let ys: Result<Vec<f64>, FamilyError> = alpha_grid
        .par_iter()
        .map(|&a| Ok(oscillatory_g(a, s, k, q, c, PhaseSign::Positive)?.abs().ln()))
        .collect();
    let xs: Vec<f64> = alpha_grid.iter().map(|a| a.ln()).collect();
    linear_fit(&xs, &ys?)
        .map(|f| f.slope)
        .ok_or(FamilyError::FitRejected("degenerate alpha grid".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const C3: f64 = -1.0 / 6.0;

    #[test]
    fn wynn_accelerates_alternating_series() {
        // ln 2 = 1 − 1/2 + 1/3 − …
        let mut acc = 0.0;
        let partial: Vec<Complex64> = (1..=20)
            .map(|n| {
                acc += if n % 2 == 1 { 1.0 } else { -1.0 } / n as f64;
                Complex64::new(acc, 0.0)
            })
            .collect();
        let (v, _) = wynn_epsilon(&partial);
        assert!((v.re - 2f64.ln()).abs() < 1e-12, "{}", v.re);
    }

    #[test]
    fn regularizations_agree() {
        let g = oscillatory_g(0.05, 1.0, 3, 1.5, C3, PhaseSign::Positive).unwrap();
        assert!(g.discrepancy < AGREEMENT_TOL, "{g:?}");
        assert!(g.converged);
        for &(alpha, s, k) in &[(1e-3, 1.2, 3), (1.0, 1.0, 3), (0.2, 1.1, 4), (0.01, 1.05, 5)] {
            let c = -1.0 / (1..=k).product::<u32>() as f64;
            let g = oscillatory_g(alpha, s, k, 1.5, c, PhaseSign::Positive).unwrap();
            assert!(g.discrepancy < AGREEMENT_TOL, "{alpha} {s} {k} {g:?}");
            assert!(g.abs().is_finite() && g.abs() < 1e3);
        }
    }

    #[test]
    fn conjugate_phase() {
        let a = oscillatory_g(0.05, 1.0, 3, 1.5, C3, PhaseSign::Positive).unwrap();
        let b = oscillatory_g(0.05, 1.0, 3, 1.5, C3, PhaseSign::Negative).unwrap();
        assert!((a.value().conj() - b.value()).norm() <= 1e-10 * a.abs());
    }

    #[test]
    fn partition_of_unity() {
        let p = three_pieces(0.03, 1.05, 3, 1.5, C3, DEFAULT_ETA).unwrap();
        assert!(p.partition_residual < 1e-8, "{p:?}");
        assert_eq!(cutoff(0.25, 0.2), 1.0);
        assert_eq!(cutoff(0.25, -0.6), 0.0);
    }
}
