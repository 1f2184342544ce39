//! Gauss–Legendre building blocks shared by every quadrature in the crate.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use gauss_quad::GaussLegendre;
use num_complex::Complex64;
use serde::Serialize;

use crate::sum::{pairwise, pairwise_complex};

/// A quadrature value together with its refinement diagnostics.
///
/// `error` is the absolute difference between the last two refinement levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexEstimate {
    pub value: Complex64,
    pub error: f64,
    pub converged: bool,
}

type Rule = Arc<Vec<(f64, f64)>>;

fn cache() -> &'static Mutex<HashMap<usize, Rule>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Rule>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Nodes and weights of the `order`-point rule on [-1, 1], ascending in x.
pub fn gl_rule(order: usize) -> Rule {
    let order = order.max(2);
    let mut map = cache().lock().expect("quadrature cache poisoned");
    map.entry(order)
        .or_insert_with(|| {
            let rule = GaussLegendre::new(order).expect("order >= 2");
            let mut pairs: Vec<(f64, f64)> = rule.as_node_weight_pairs().to_vec();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            Arc::new(pairs)
        })
        .clone()
}

/// Rule on [a, b] split into `panels` equal panels of `order` points each.
pub fn composite(a: f64, b: f64, panels: usize, order: usize) -> Vec<(f64, f64)> {
    let panels = panels.max(1);
    let h = (b - a) / panels as f64;
    let breaks: Vec<f64> = (0..=panels).map(|i| a + h * i as f64).collect();
    on_breaks(&breaks, order)
}

/// Rule on the panels delimited by an ascending list of breakpoints.
pub fn on_breaks(breaks: &[f64], order: usize) -> Vec<(f64, f64)> {
    let rule = gl_rule(order);
    let mut out = Vec::with_capacity(breaks.len().saturating_sub(1) * rule.len());
    for w in breaks.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        out.extend(rule.iter().map(|&(x, wt)| (mid + half * x, half * wt)));
    }
    out
}

/// Breakpoints on [a, b] refined geometrically (ratio 1/2) towards `a`,
/// with the innermost panel of width `(b - a) / 2^levels` starting at `a`.
pub fn graded_breaks(a: f64, b: f64, levels: usize) -> Vec<f64> {
    let mut breaks = vec![a];
    for i in (0..levels).rev() {
        breaks.push(a + (b - a) * 0.5f64.powi(i as i32 + 1));
    }
    breaks.push(b);
    breaks
}

pub fn integrate(f: impl Fn(f64) -> f64, nodes: &[(f64, f64)]) -> f64 {
    let terms: Vec<f64> = nodes.iter().map(|&(x, w)| w * f(x)).collect();
    pairwise(&terms)
}

pub fn integrate_complex(f: impl Fn(f64) -> Complex64, nodes: &[(f64, f64)]) -> Complex64 {
    let terms: Vec<Complex64> = nodes.iter().map(|&(x, w)| f(x) * w).collect();
    pairwise_complex(&terms)
}

/// Refinement test: `|fine - coarse| <= tol * max(|fine|, floor)`.
pub fn agrees(fine: f64, coarse: f64, tol: f64, floor: f64) -> bool {
    (fine - coarse).abs() <= tol * fine.abs().max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rules_integrate_polynomials_exactly() {
        for order in [2usize, 5, 16, 64] {
            let nodes = composite(-1.0, 1.0, 1, order);
            let deg = 2 * order - 1;
            let got = integrate(|x| x.powi(deg as i32 - 1), &nodes);
            let exact = if (deg - 1) % 2 == 0 { 2.0 / deg as f64 } else { 0.0 };
            assert!((got - exact).abs() < 1e-13, "order {order}: {got} vs {exact}");
        }
    }

    #[test]
    fn graded_panels_handle_endpoint_singularity() {
        let nodes = on_breaks(&graded_breaks(0.0, 1.0, 80), 12);
        let got = integrate(|x| x.powf(-0.5), &nodes);
        assert!((got - 2.0).abs() < 1e-10);
    }

    #[test]
    fn rules_are_cached_and_sorted() {
        let a = gl_rule(20);
        let b = gl_rule(20);
        assert!(Arc::ptr_eq(&a, &b));
        assert!(a.windows(2).all(|w| w[0].0 < w[1].0));
    }
}
