//! Exponent bookkeeping for the type-k estimates and the dyadic
//! optimisation over sublevel sets of the weight.

use serde::Serialize;

use crate::extension::dual_exponent;

use super::FamilyError;

/// Residual allowed when checking exact exponent identities.
pub const IDENTITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExponentPair {
    pub p: f64,
    pub q: f64,
    pub k: Option<u32>,
}

impl ExponentPair {
    pub fn new(p: f64, q: f64, k: Option<u32>) -> Result<Self, FamilyError> {
        if !(p >= 1.0) || p.is_nan() {
            return Err(FamilyError::BadExponent(format!("p = {p} must be >= 1")));
        }
        if !(q >= 1.0) || q.is_nan() {
            return Err(FamilyError::BadExponent(format!("q = {q} must be >= 1")));
        }
        Ok(Self { p, q, k })
    }

    /// The pair on the line q = p'/(k+1).
    pub fn critical(p: f64, k: u32) -> Result<Self, FamilyError> {
        Self::new(p, dual_exponent(p) / (k as f64 + 1.0), Some(k))
    }

    pub fn p_dual(&self) -> f64 {
        dual_exponent(self.p)
    }

    pub fn q_dual(&self) -> f64 {
        dual_exponent(self.q)
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= IDENTITY_TOL * a.abs().max(b.abs()).max(1.0)
    }

    /// q = p'/3.
    pub fn on_nondegenerate_line(&self) -> bool {
        Self::close(self.q, self.p_dual() / 3.0)
    }

    /// q = p'/(k+1); false without k.
    pub fn on_type_k_line(&self) -> bool {
        self.k
            .is_some_and(|k| Self::close(self.q, self.p_dual() / (k as f64 + 1.0)))
    }

    /// 1 ≤ q ≤ p'/(k+1) and p' ≥ k+2; false without k.
    pub fn in_sharp_range(&self) -> bool {
        let Some(k) = self.k else { return false };
        let k = k as f64;
        let pd = self.p_dual();
        self.q <= pd / (k + 1.0) * (1.0 + IDENTITY_TOL) && pd >= (k + 2.0) * (1.0 - IDENTITY_TOL)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Subcritical {
    pub rho: f64,
    pub tau: f64,
    /// Largest residual among the checked identities.
    pub residual: f64,
}

/// ρ = (k−2−p(k−3))/(k−1−p(k−2)), τ = (q(k+1)−(k−2))/3, unchecked.
pub fn rho_tau(p: f64, q: f64, k: u32) -> (f64, f64) {
    let kf = k as f64;
    let rho = (kf - 2.0 - p * (kf - 3.0)) / (kf - 1.0 - p * (kf - 2.0));
    let tau = (q * (kf + 1.0) - (kf - 2.0)) / 3.0;
    (rho, tau)
}

/// (ρ, τ) for the critical pair (p, p'/(k+1)), with the algebraic identities
/// they must satisfy verified.
pub fn subcritical_exponents(p: f64, q: f64, k: u32) -> Result<Subcritical, FamilyError> {
    if k < 3 {
        return Err(FamilyError::BadExponent(format!("type k = {k} must be >= 3")));
    }
    let kf = k as f64;
    if !(p > 1.0 && p < (kf + 2.0) / (kf + 1.0)) {
        return Err(FamilyError::BadExponent(format!(
            "p = {p} outside (1, {})",
            (kf + 2.0) / (kf + 1.0)
        )));
    }
    let pair = ExponentPair::new(p, q, Some(k))?;
    if !pair.on_type_k_line() {
        return Err(FamilyError::OffCritical { p, q, k });
    }
    let (rho, tau) = rho_tau(p, q, k);

    let scale = |x: f64| x.abs().max(1.0);
    let checks = [
        (tau - dual_exponent(rho) / 3.0).abs() / scale(tau),
        (3.0 * (tau - 1.0) / (kf + 1.0) + 1.0 - q).abs() / scale(q),
        (3.0 * (tau / rho - 1.0) / (kf + 1.0) + 1.0 - q / p).abs() / scale(q / p),
    ];
    let residual = checks.into_iter().fold(0.0, f64::max);
    if !(rho >= 1.0 - IDENTITY_TOL && rho < 4.0 / 3.0) {
        return Err(FamilyError::Identity(format!("rho = {rho} outside [1, 4/3)")));
    }
    if residual > IDENTITY_TOL {
        return Err(FamilyError::Identity(format!("exponent identities off by {residual:e}")));
    }
    Ok(Subcritical { rho, tau, residual })
}

/// The two competing bounds on the j-th dyadic piece.
pub fn dyadic_terms(alpha: f64, e: f64, k: u32, tau: f64, rho: f64, j: i32) -> (f64, f64) {
    let j = j as f64;
    let first = ((-j / (3.0 * tau)).exp2() * e.powf(1.0 / rho) / alpha).powf(tau);
    let second = (j / (k as f64 - 2.0)).exp2() * e / alpha;
    (first, second)
}

/// Σ_j min{first_j, second_j} over the listed bins.
pub fn dyadic_brute_force(alpha: f64, e: f64, k: u32, tau: f64, rho: f64, bins: impl IntoIterator<Item = i32>) -> f64 {
    let terms: Vec<f64> = bins
        .into_iter()
        .map(|j| {
            let (a, b) = dyadic_terms(alpha, e, k, tau, rho, j);
            a.min(b)
        })
        .collect();
    crate::sum::pairwise(&terms)
}

pub const BRUTE_FORCE_RANGE: (i32, i32) = (-60, 60);

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DyadicOptimum {
    pub j_star: i32,
    pub bound: f64,
    pub brute_force: f64,
    /// bound / brute_force.
    pub ratio: f64,
}

/// Minimises S(J) = first_J + second_J over integer J: the tail of each
/// geometric series is dominated by its value at the switch point.
pub fn dyadic_min_optimize(alpha: f64, e: f64, k: u32, tau: f64, rho: f64) -> Result<DyadicOptimum, FamilyError> {
    if !(alpha > 0.0 && e > 0.0 && alpha.is_finite() && e.is_finite()) {
        return Err(FamilyError::BadExponent(format!("alpha = {alpha}, E = {e} must be positive")));
    }
    if k < 3 || !(tau > 0.0 && rho > 0.0) {
        return Err(FamilyError::BadExponent(format!("k = {k}, tau = {tau}, rho = {rho}")));
    }
    let kf = k as f64;
    // Continuous balance point of the two terms.
    let a = 1.0 / 3.0;
    let b = 1.0 / (kf - 2.0);
    let log_first0 = tau * (e.log2() / rho - alpha.log2());
    let log_second0 = e.log2() - alpha.log2();
    let j0 = (log_first0 - log_second0) / (a + b);
    let centre = j0.round().clamp(-1e6, 1e6) as i32;
    let (j_star, bound) = (centre - 3..=centre + 3)
        .map(|j| {
            let (f, s) = dyadic_terms(alpha, e, k, tau, rho, j);
            (j, f + s)
        })
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .expect("non-empty range");
    let brute_force = dyadic_brute_force(alpha, e, k, tau, rho, BRUTE_FORCE_RANGE.0..=BRUTE_FORCE_RANGE.1);
    Ok(DyadicOptimum {
        j_star,
        bound,
        brute_force,
        ratio: bound / brute_force,
    })
}

/// α^{−(3(τ−1)/(k+1)+1)}·E^{3(τ/ρ−1)/(k+1)+1}.
pub fn dyadic_envelope(alpha: f64, e: f64, k: u32, tau: f64, rho: f64) -> f64 {
    let k1 = k as f64 + 1.0;
    alpha.powf(-(3.0 * (tau - 1.0) / k1 + 1.0)) * e.powf(3.0 * (tau / rho - 1.0) / k1 + 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn k3_example() {
        let s = subcritical_exponents(1.2, 1.5, 3).unwrap();
        assert_relative_eq!(s.rho, 1.25, epsilon = 1e-14);
        assert_relative_eq!(s.tau, 5.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(3.0 * (s.tau - 1.0) / 4.0 + 1.0, 1.5, epsilon = 1e-14);
        assert_relative_eq!(3.0 * (s.tau / s.rho - 1.0) / 4.0 + 1.0, 1.25, epsilon = 1e-14);
    }

    #[test]
    fn rejects_off_critical_and_out_of_range() {
        assert!(matches!(subcritical_exponents(1.2, 1.6, 3), Err(FamilyError::OffCritical { .. })));
        assert!(subcritical_exponents(1.3, 1.0, 3).is_err());
        assert!(subcritical_exponents(1.1, 1.0, 2).is_err());
    }

    #[test]
    fn rho_tends_to_one() {
        for k in 3..8 {
            assert_eq!(rho_tau(1.0, 1.0, k).0, 1.0);
            let p = 1.0 + 1e-9;
            assert!((rho_tau(p, dual_exponent(p) / (k as f64 + 1.0), k).0 - 1.0).abs() < 1e-7);
        }
    }

    #[test]
    fn single_bin() {
        let (a, b) = dyadic_terms(1.0, 1.0, 3, 5.0 / 3.0, 1.25, 0);
        assert_eq!(dyadic_brute_force(1.0, 1.0, 3, 5.0 / 3.0, 1.25, [0]), a.min(b));
    }

    #[test]
    fn optimum_tracks_brute_force_and_envelope() {
        let d = dyadic_min_optimize(1.0, 1.0, 3, 5.0 / 3.0, 1.25).unwrap();
        assert!(d.ratio <= 4.0 && d.ratio >= 0.25);
        for i in 0..10 {
            for l in 0..10 {
                let alpha = 10f64.powf(-2.0 + 0.4 * i as f64);
                let e = 10f64.powf(-2.0 + 0.4 * l as f64);
                let d = dyadic_min_optimize(alpha, e, 3, 5.0 / 3.0, 1.25).unwrap();
                assert!(d.ratio <= 4.0 && d.ratio >= 0.25, "{d:?}");
                let c = d.bound / dyadic_envelope(alpha, e, 3, 5.0 / 3.0, 1.25);
                assert!((1.0 / 8.0..=8.0).contains(&c), "{c}");
            }
        }
    }

    #[test]
    fn pair_predicates() {
        let pair = ExponentPair::new(1.2, 2.0, Some(2)).unwrap();
        assert!(pair.on_nondegenerate_line());
        let pair = ExponentPair::critical(1.1, 4).unwrap();
        assert!(pair.on_type_k_line());
        assert!(pair.in_sharp_range());
        assert!(!ExponentPair::new(1.3, 1.0, Some(4)).unwrap().in_sharp_range());
        assert!(ExponentPair::new(0.5, 2.0, None).is_err());
    }
}
