//! Order-fixed reductions.
//!
//! Every quadrature in the crate funnels its node contributions through these
//! helpers so that the rounding pattern depends only on the number of terms,
//! never on how the terms were produced (sequentially or on a thread pool).

use num_complex::Complex64;

const LEAF: usize = 8;

/// Pairwise (cascade) sum with a fixed split point at `len / 2`.
pub fn pairwise(xs: &[f64]) -> f64 {
    if xs.len() <= LEAF {
        return xs.iter().fold(0.0, |acc, &x| acc + x);
    }
    let mid = xs.len() / 2;
    pairwise(&xs[..mid]) + pairwise(&xs[mid..])
}

pub fn pairwise_complex(xs: &[Complex64]) -> Complex64 {
    if xs.len() <= LEAF {
        return xs.iter().fold(Complex64::new(0.0, 0.0), |acc, &x| acc + x);
    }
    let mid = xs.len() / 2;
    pairwise_complex(&xs[..mid]) + pairwise_complex(&xs[mid..])
}
