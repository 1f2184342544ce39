//! The log-weighted test function on a type-k conic piece and the
//! quantities behind its unbounded extension norm.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::gamma::gamma_ui;

use crate::extension::dual_exponent;
use crate::quad::{self, ComplexEstimate};

use super::oscillatory::{contour_integral, geometric_grid, oscillatory_g, PhaseSign, PolyPhase};
use super::FamilyError;

/// γ(t) = Σ_j coeffs[j]·t^j.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct GraphCurve {
    pub coeffs: Vec<f64>,
}

impl GraphCurve {
    /// γ(t) = 1 + t − t^k/k!.
    pub fn minimal(k: u32) -> Self {
        let mut coeffs = vec![0.0; k as usize + 1];
        coeffs[0] = 1.0;
        coeffs[1] = 1.0;
        coeffs[k as usize] = -1.0 / factorial(k);
        Self { coeffs }
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c)
    }

    /// Γ coefficients (j, c_j), j ≥ 2: γ minus its tangent line at 0.
    fn gamma_terms(&self) -> Vec<(i32, f64)> {
        self.coeffs
            .iter()
            .enumerate()
            .skip(2)
            .filter(|(_, &c)| c != 0.0)
            .map(|(j, &c)| (j as i32, c))
            .collect()
    }
}

fn factorial(k: u32) -> f64 {
    (1..=k).map(f64::from).product()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SoggeParams {
    pub k: u32,
    pub p: f64,
    pub q: f64,
    pub eps: f64,
    pub delta: f64,
    pub curve: GraphCurve,
}

impl SoggeParams {
    /// q is fixed to p'/(k+1); curve defaults to [`GraphCurve::minimal`].
    pub fn new(k: u32, p: f64, eps: f64, delta: f64, curve: Option<GraphCurve>) -> Result<Self, FamilyError> {
        if k < 3 {
            return Err(FamilyError::BadParameter(format!("k = {k} must be >= 3")));
        }
        if !(p > 1.0 && p.is_finite()) {
            return Err(FamilyError::BadExponent(format!("p = {p} must lie in (1, inf)")));
        }
        let q = dual_exponent(p) / (k as f64 + 1.0);
        if !(q > 1.0) {
            return Err(FamilyError::BadExponent(format!("q = p'/(k+1) = {q} must exceed 1")));
        }
        for (name, v) in [("eps", eps), ("delta", delta)] {
            if !(v > 0.0 && v <= 0.1) {
                return Err(FamilyError::BadParameter(format!("{name} = {v} outside (0, 0.1]")));
            }
        }
        let curve = curve.unwrap_or_else(|| GraphCurve::minimal(k));
        let ku = k as usize;
        let c = &curve.coeffs;
        if c.len() <= ku || c[2..ku].iter().any(|&x| x != 0.0) {
            return Err(FamilyError::BadParameter("derivatives 2..k-1 of the curve must vanish at 0".into()));
        }
        if !(c[ku] < 0.0) {
            return Err(FamilyError::BadParameter("k-th derivative of the curve must be negative".into()));
        }
        if c[ku + 1..].iter().any(|&x| x > 0.0 || !x.is_finite()) {
            return Err(FamilyError::BadParameter("higher curve coefficients must be <= 0".into()));
        }
        Ok(Self {
            k,
            p,
            q,
            eps,
            delta,
            curve,
        })
    }

    /// c = γ^{(k)}(0)/k!.
    pub fn c(&self) -> f64 {
        self.curve.coeffs[self.k as usize]
    }

    pub fn p_dual(&self) -> f64 {
        dual_exponent(self.p)
    }

    pub fn q_dual(&self) -> f64 {
        dual_exponent(self.q)
    }
}

pub const S_NODES: usize = 12;

pub struct SoggeFamily {
    pub params: SoggeParams,
}

impl SoggeFamily {
    pub fn new(params: SoggeParams) -> Self {
        Self { params }
    }

    /// f(s, t) = t^{−1/q'}|ln t|^{−1/p'}·χ_{[1,1+ε]}(s); the t-range (0, δ)
    /// is imposed by the integrals, not here.
    pub fn f(&self, s: f64, t: f64) -> f64 {
        let sp = &self.params;
        if !(1.0..=1.0 + sp.eps).contains(&s) || !(t > 0.0 && t != 1.0) {
            return 0.0;
        }
        t.powf(-1.0 / sp.q_dual()) * t.ln().abs().powf(-1.0 / sp.p_dual())
    }

    /// ∫₀^δ t^{−1/q'}|ln t|^{−1/p'} dt = q^{1/p}·Γ(1/p, ln(1/δ)/q).
    pub fn t_mass_exact(&self) -> f64 {
        let sp = &self.params;
        sp.q.powf(1.0 / sp.p) * gamma_ui(1.0 / sp.p, (1.0 / sp.delta).ln() / sp.q)
    }

    /// Nodes in v for ∫₀^δ h(t) f dt = ∫_L^V h(e^{−v}) e^{−v/q} v^{−1/p'} dv.
    fn v_nodes(&self, panels: usize) -> Vec<(f64, f64)> {
        let sp = &self.params;
        let l = (1.0 / sp.delta).ln();
        // e^{−(V−L)/q} ≤ 1e-17.
        let v_max = l + sp.q * 40.0;
        let breaks: Vec<f64> = (0..=panels)
            .map(|i| l + (v_max - l) * (i as f64 / panels as f64).powi(2))
            .collect();
        quad::on_breaks(&breaks, 16)
            .into_iter()
            .map(|(v, w)| (v, w * (-v / sp.q).exp() * v.powf(-1.0 / sp.p_dual())))
            .collect()
    }

    /// ∫₀^δ t^{−1/q'}|ln t|^{−1/p'} dt by quadrature in v = −ln t.
    pub fn t_mass(&self) -> f64 {
        quad::integrate(|_| 1.0, &self.v_nodes(64))
    }

    /// Tf(x,y,r) = ∫₁^{1+ε}∫₀^δ e^{2πis(xt + yγ(t) + r)} f(s,t) dt ds.
    pub fn big_t(&self, x: f64, y: f64, r: f64) -> ComplexEstimate {
        let sp = &self.params;
        let rate = TAU * (1.0 + sp.eps) * (x.abs() + y.abs() * 2.0 + r.abs() + 1.0);
        let mut panels = ((rate * sp.delta).ceil() as usize).max(8);
        let eval = |panels: usize| {
            let v = self.v_nodes(panels);
            let s_nodes = quad::composite(1.0, 1.0 + sp.eps, (rate * sp.eps).ceil() as usize + panels / 8, 16);
            let rows: Vec<Complex64> = s_nodes
                .par_iter()
                .map(|&(s, ws)| {
                    let inner = quad::integrate_complex(
                        |vv| {
                            let t = (-vv).exp();
                            Complex64::from_polar(1.0, TAU * s * (x * t + y * sp.curve.eval(t) + r))
                        },
                        &v,
                    );
                    inner * ws
                })
                .collect();
            crate::sum::pairwise_complex(&rows)
        };
        let mut coarse = eval(panels);
        for _ in 0..6 {
            panels *= 2;
            let fine = eval(panels);
            let error = (fine - coarse).norm();
            if error <= 1e-10 * fine.norm().max(1e-12) {
                return ComplexEstimate {
                    value: fine,
                    error,
                    converged: true,
                };
            }
            coarse = fine;
        }
        ComplexEstimate {
            value: coarse,
            error: f64::INFINITY,
            converged: false,
        }
    }

    /// I(u,α,s) = ∫₀^{uδ} e^{2πis(t + αu^kΓ(t/u))} t^{−1/q'} |1 − ln t/ln u|^{−1/p'} dt.
    pub fn i_integral(&self, u: f64, alpha: f64, s: f64) -> Result<(Complex64, bool), FamilyError> {
        let sp = &self.params;
        if !(u > std::f64::consts::E) {
            return Err(FamilyError::BadParameter(format!("u = {u} must exceed e")));
        }
        if !(alpha > 0.0 && s > 0.0) {
            return Err(FamilyError::BadParameter(format!("alpha = {alpha}, s = {s} must be positive")));
        }
        let k = sp.k as i32;
        let terms: Vec<(i32, f64)> = sp
            .curve
            .gamma_terms()
            .into_iter()
            .map(|(j, c)| (j, alpha * c * u.powi(k - j)))
            .collect();
        let phase = PolyPhase::new(TAU * s, terms)?;
        let log_u = u.ln();
        let expo = -1.0 / sp.p_dual();
        let amp = move |z: Complex64| (1.0 - z.ln() / log_u).powf(expo);
        Ok(contour_integral(&phase, 1.0 / sp.q_dual(), &amp, u * sp.delta))
    }

    fn s_rule(&self, n: usize) -> Vec<(f64, f64)> {
        quad::composite(1.0, 1.0 + self.params.eps, 1, n)
    }

    /// I at the s-nodes backing [`Self::j_from_samples`].
    pub fn i_samples(&self, u: f64, alpha: f64) -> Result<(Vec<Complex64>, bool), FamilyError> {
        let mut ok = true;
        let mut out = Vec::with_capacity(S_NODES);
        for (s, _) in self.s_rule(S_NODES) {
            let (v, c) = self.i_integral(u, alpha, s)?;
            ok &= c;
            out.push(v);
        }
        Ok((out, ok))
    }

    /// J(u,α,r) = ∫₁^{1+ε} I(u,α,s) e^{2πisr} ds from I at the s-nodes.
    pub fn j_from_samples(&self, samples: &[Complex64], r: f64) -> Complex64 {
        self.s_rule(S_NODES)
            .iter()
            .zip(samples)
            .map(|(&(s, w), &i)| i * Complex64::from_polar(w, TAU * s * r))
            .sum()
    }

    pub fn j_value(&self, u: f64, alpha: f64, r: f64) -> Result<(Complex64, bool), FamilyError> {
        let (samples, ok) = self.i_samples(u, alpha)?;
        Ok((self.j_from_samples(&samples, r), ok))
    }

    /// ∫₁^{1+ε} g(α,s) e^{2πisr} ds and ∫|g| ds.
    pub fn g_moment(&self, alpha: f64, r: f64) -> Result<(Complex64, f64, bool), FamilyError> {
        let sp = &self.params;
        let mut acc = Complex64::new(0.0, 0.0);
        let mut abs = 0.0;
        let mut ok = true;
        for (s, w) in self.s_rule(S_NODES) {
            let g = oscillatory_g(alpha, s, sp.k, sp.q, sp.c(), PhaseSign::Positive)?;
            ok &= g.converged;
            acc += g.value() * Complex64::from_polar(w, TAU * s * r);
            abs += w * g.abs();
        }
        Ok((acc, abs, ok))
    }
}

/// α-interval and r-interval witnessing the lower bound on |J|.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanWindow {
    pub alpha1: f64,
    pub alpha2: f64,
    pub r2: f64,
    /// min over the window of |∫₁^{1+ε} g(α,s) ds|.
    pub min_abs_g_moment: f64,
}

pub const PRESCAN_ALPHA_RANGE: (f64, f64) = (5e-3, 0.2);

/// Chooses [α₁, 2α₁] ⊂ [`PRESCAN_ALPHA_RANGE`] maximising min|∫g ds|, then
/// r₂ so that |∫g(1 − e^{2πisr})ds| ≤ ¼·min|∫g ds| on [0, r₂].
pub fn prescan_window(fam: &SoggeFamily) -> Result<ScanWindow, FamilyError> {
    let (lo, hi) = PRESCAN_ALPHA_RANGE;
    let steps = ((hi / lo).log2() * 4.0).floor() as usize;
    let alphas: Vec<f64> = (0..=steps).map(|i| lo * (i as f64 / 4.0).exp2()).collect();
    let moments: Result<Vec<(f64, f64)>, FamilyError> = alphas
        .par_iter()
        .map(|&a| {
            let (m, abs, _) = fam.g_moment(a, 0.0)?;
            Ok((m.norm(), abs))
        })
        .collect();
    let moments = moments?;
    let mut best: Option<(usize, f64, f64)> = None;
    for i in 0..moments.len().saturating_sub(4) {
        let window = &moments[i..=i + 4];
        let score = window.iter().map(|m| m.0).fold(f64::INFINITY, f64::min);
        let abs = window.iter().map(|m| m.1).fold(0.0, f64::max);
        if best.is_none_or(|b| score > b.1) {
            best = Some((i, score, abs));
        }
    }
    let (i, score, abs) = best.ok_or(FamilyError::BadParameter("pre-scan range too narrow".into()))?;
    let r2 = 0.25 * score / (TAU * (1.0 + fam.params.eps) * abs);
    Ok(ScanWindow {
        alpha1: alphas[i],
        alpha2: alphas[i + 4],
        r2,
        min_abs_g_moment: score,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DivergenceRow {
    pub u_max: f64,
    pub partial_mass: f64,
    /// min |J| over every evaluation with u ≤ u_max.
    pub min_abs_j: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivergenceScan {
    pub window: ScanWindow,
    pub rows: Vec<DivergenceRow>,
    /// Reported witness A: min |J| over the scanned box.
    pub a_lower: f64,
    /// 0.5·min |∫g ds| over the scanned α.
    pub limit_floor: f64,
    pub strictly_increasing: bool,
    pub increment_ratios: Vec<f64>,
    pub ratios_in_range: bool,
    /// Relative error of the harness on J ≡ 1 against its closed form.
    pub self_test_residual: f64,
    pub excluded: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct DivergenceOptions {
    pub u_nodes: usize,
    pub alpha_nodes: usize,
    pub r_nodes: usize,
}

impl Default for DivergenceOptions {
    fn default() -> Self {
        Self {
            u_nodes: 4,
            alpha_nodes: 4,
            r_nodes: 3,
        }
    }
}

/// M(U) = ∫₀^{r₂}∫_{α₁}^{α₂}∫_R^U |J|^{p'} du/(u ln u) dα dr on w = ln ln u,
/// with R the first grid point.
fn partial_masses(
    grid: &[f64],
    window: &ScanWindow,
    opts: DivergenceOptions,
    mut density: impl FnMut(f64, f64, f64) -> Option<f64>,
) -> Vec<f64> {
    let a_nodes = quad::composite(window.alpha1, window.alpha2, 1, opts.alpha_nodes);
    let r_nodes = quad::composite(0.0, window.r2, 1, opts.r_nodes);
    let mut masses = vec![0.0];
    for pair in grid.windows(2) {
        let w_nodes = quad::composite(pair[0].ln().ln(), pair[1].ln().ln(), 1, opts.u_nodes);
        let mut inc = 0.0;
        for &(w, ww) in &w_nodes {
            let u = w.exp().exp();
            for &(a, wa) in &a_nodes {
                for &(r, wr) in &r_nodes {
                    if let Some(d) = density(u, a, r) {
                        inc += ww * wa * wr * d;
                    }
                }
            }
        }
        masses.push(masses.last().copied().unwrap_or(0.0) + inc);
    }
    masses
}

pub fn sogge_divergence_scan(
    fam: &SoggeFamily,
    u_grid: &[f64],
    window: Option<ScanWindow>,
    opts: DivergenceOptions,
) -> Result<DivergenceScan, FamilyError> {
    if u_grid.len() < 2 || u_grid.windows(2).any(|w| !(w[1] > w[0])) || u_grid[0] < 10.0 {
        return Err(FamilyError::BadParameter("u grid must be increasing and start at >= 10".into()));
    }
    let window = match window {
        Some(w) => w,
        None => prescan_window(fam)?,
    };
    let pd = fam.params.p_dual();
    let a_nodes = quad::composite(window.alpha1, window.alpha2, 1, opts.alpha_nodes);
    let r_nodes = quad::composite(0.0, window.r2, 1, opts.r_nodes);
    let mut alphas: Vec<f64> = a_nodes.iter().map(|n| n.0).collect();
    alphas.extend([window.alpha1, window.alpha2]);
    let mut rs: Vec<f64> = r_nodes.iter().map(|n| n.0).collect();
    rs.extend([0.0, window.r2]);

    // Every u at which J is needed: grid points and the w-nodes between them.
    let mut us: Vec<f64> = u_grid.to_vec();
    for pair in u_grid.windows(2) {
        us.extend(
            quad::composite(pair[0].ln().ln(), pair[1].ln().ln(), 1, opts.u_nodes)
                .into_iter()
                .map(|(w, _)| w.exp().exp()),
        );
    }
    let jobs: Vec<(f64, f64)> = us.iter().flat_map(|&u| alphas.iter().map(move |&a| (u, a))).collect();
    let samples: Result<Vec<((f64, f64), (Vec<Complex64>, bool))>, FamilyError> = jobs
        .par_iter()
        .map(|&(u, a)| Ok(((u, a), fam.i_samples(u, a)?)))
        .collect();
    let samples = samples?;
    let lookup = |u: f64, a: f64| {
        samples
            .iter()
            .find(|((uu, aa), _)| *uu == u && *aa == a)
            .map(|(_, s)| s)
    };
    let mut excluded = 0;
    let mut min_by_u: Vec<(f64, f64)> = Vec::new();
    for ((u, _), (s, ok)) in &samples {
        if !ok {
            excluded += 1;
            continue;
        }
        let m = rs
            .iter()
            .map(|&r| fam.j_from_samples(s, r).norm())
            .fold(f64::INFINITY, f64::min);
        min_by_u.push((*u, m));
    }
    let masses = partial_masses(u_grid, &window, opts, |u, a, r| {
        let (s, ok) = lookup(u, a)?;
        ok.then(|| fam.j_from_samples(s, r).norm().powf(pd))
    });
    let rows: Vec<DivergenceRow> = u_grid
        .iter()
        .zip(&masses)
        .map(|(&u_max, &partial_mass)| DivergenceRow {
            u_max,
            partial_mass,
            min_abs_j: min_by_u
                .iter()
                .filter(|(u, _)| *u <= u_max * (1.0 + 1e-12))
                .map(|m| m.1)
                .fold(f64::INFINITY, f64::min),
        })
        .collect();
    let a_lower = min_by_u.iter().map(|m| m.1).fold(f64::INFINITY, f64::min);

    let floors: Result<Vec<f64>, FamilyError> = alphas
        .par_iter()
        .map(|&a| Ok(fam.g_moment(a, 0.0)?.0.norm()))
        .collect();
    let limit_floor = 0.5 * floors?.into_iter().fold(f64::INFINITY, f64::min);

    let strictly_increasing = masses.windows(2).all(|w| w[1] > w[0]);
    let increments: Vec<f64> = masses.windows(2).map(|w| w[1] - w[0]).collect();
    let increment_ratios: Vec<f64> = increments.windows(2).map(|w| w[1] / w[0]).collect();
    let ratios_in_range = increment_ratios.iter().all(|r| (0.5..=1.5).contains(r));

    let unit = partial_masses(u_grid, &window, opts, |_, _, _| Some(1.0));
    let r0 = u_grid[0].ln().ln();
    let self_test_residual = u_grid
        .iter()
        .zip(&unit)
        .map(|(&u, &m)| {
            let exact = window.r2 * (window.alpha2 - window.alpha1) * (u.ln().ln() - r0);
            (m - exact).abs() / exact.abs().max(f64::MIN_POSITIVE)
        })
        .skip(1)
        .fold(0.0, f64::max);

    Ok(DivergenceScan {
        window,
        rows,
        a_lower,
        limit_floor,
        strictly_increasing,
        increment_ratios,
        ratios_in_range,
        self_test_residual,
        excluded,
    })
}

/// sup over the (α, s) grid of |I(u,α,s) − g(α,s)|/|g(α,s)| at each u.
pub fn i_to_g_gaps(fam: &SoggeFamily, u_values: &[f64], alphas: &[f64], ss: &[f64]) -> Result<Vec<f64>, FamilyError> {
    let sp = &fam.params;
    let pairs: Vec<(f64, f64)> = alphas.iter().flat_map(|&a| ss.iter().map(move |&s| (a, s))).collect();
    let gs: Result<Vec<Complex64>, FamilyError> = pairs
        .par_iter()
        .map(|&(a, s)| Ok(oscillatory_g(a, s, sp.k, sp.q, sp.c(), PhaseSign::Positive)?.value()))
        .collect();
    let gs = gs?;
    u_values
        .iter()
        .map(|&u| {
            let gaps: Result<Vec<f64>, FamilyError> = pairs
                .par_iter()
                .zip(gs.par_iter())
                .map(|(&(a, s), g)| Ok((fam.i_integral(u, a, s)?.0 - g).norm() / g.norm()))
                .collect();
            Ok(gaps?.into_iter().fold(0.0, f64::max))
        })
        .collect()
}

/// 10^3, 10^4, 10^5, 10^6.
pub fn default_u_grid() -> Vec<f64> {
    geometric_grid(1e3, 1e6, 4)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn family() -> SoggeFamily {
        SoggeFamily::new(SoggeParams::new(3, 1.2, 0.05, 0.1, None).unwrap())
    }

    #[test]
    fn f_direct_formula() {
        let fam = family();
        let qd = fam.params.q_dual();
        let v = fam.f(1.05, (-1f64).exp());
        assert!((v - (1.0 / qd).exp()).abs() < 1e-14);
        assert_eq!(fam.f(1.2, 0.05), 0.0);
        assert_eq!(fam.f(1.01, 0.0), 0.0);
    }

    #[test]
    fn t_mass_finite_and_matches_incomplete_gamma() {
        let fam = family();
        let exact = fam.t_mass_exact();
        assert!(exact.is_finite() && exact > 0.0);
        assert!((fam.t_mass() - exact).abs() < 1e-10 * exact);
    }

    #[test]
    fn big_t_at_origin() {
        let fam = family();
        let t = fam.big_t(0.0, 0.0, 0.0);
        assert!(t.converged);
        let exact = fam.params.eps * fam.t_mass_exact();
        assert!((t.value.re - exact).abs() < 1e-9 * exact && t.value.im.abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(SoggeParams::new(2, 1.2, 0.05, 0.1, None).is_err());
        assert!(SoggeParams::new(3, 1.2, 0.2, 0.1, None).is_err());
        let mut c = GraphCurve::minimal(3);
        c.coeffs[2] = 0.1;
        assert!(SoggeParams::new(3, 1.2, 0.05, 0.1, Some(c)).is_err());
        assert!((SoggeParams::new(3, 1.2, 0.05, 0.1, None).unwrap().c() + 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn i_approaches_g() {
        let fam = family();
        let gaps = i_to_g_gaps(&fam, &[1e3, 1e4], &[0.05, 0.2], &[1.0, 1.05]).unwrap();
        assert!(gaps[1] <= gaps[0], "{gaps:?}");
        assert!(gaps[1] <= 0.05, "{gaps:?}");
    }
}
