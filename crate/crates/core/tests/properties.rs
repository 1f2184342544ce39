use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use nalgebra::{DMatrix, Vector2};
use proptest::prelude::*;

use conelab::extension::{extension_eval, ConeDensity, ExtensionOptions};
use conelab::gauge::{sigma_point, Gauge, GaugeSpec};
use conelab::measure::{
    cone_norm, lorentz_norm, sublevel_histogram, QuadScheme, Refinement, SampledFunction, WeightedConeMeasure,
};
use conelab::weight::{affine_covariance_residual, weight, WeightConvention};

fn planar_specs() -> Vec<GaugeSpec> {
    vec![
        GaugeSpec::circle(),
        GaugeSpec::ellipse(1.5, 0.8),
        GaugeSpec::linear_image(GaugeSpec::superellipse(4), vec![vec![1.0, 0.3], vec![-0.2, 0.9]]),
        GaugeSpec::superellipse(4),
        GaugeSpec::superellipse(6),
        GaugeSpec::radial(vec![1.0, 0.0, 0.05, 0.01], vec![0.0, 0.0, 0.02]),
    ]
}

fn all_specs() -> Vec<GaugeSpec> {
    let mut v = planar_specs();
    v.push(GaugeSpec::euclidean(3));
    v
}

fn is_radial(spec: &GaugeSpec) -> bool {
    matches!(spec.kind, conelab::gauge::GaugeKind::Radial { .. })
}

/// A nonzero point from polar data; the third coordinate only in 3D.
fn point(dim: usize, r: f64, a: f64, b: f64) -> Vec<f64> {
    match dim {
        2 => vec![r * a.cos(), r * a.sin()],
        _ => vec![r * b.cos() * a.cos(), r * b.cos() * a.sin(), r * b.sin()],
    }
}

fn gauge_strategy() -> impl Strategy<Value = GaugeSpec> {
    prop::sample::select(all_specs())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, ..ProptestConfig::default() })]

    #[test]
    fn homogeneity_euler_annihilation(
        spec in gauge_strategy(),
        r in 0.2f64..5.0,
        a in 0.0f64..TAU,
        b in -1.4f64..1.4,
        t in 0.1f64..10.0,
    ) {
        let g = Gauge::new(spec.clone()).unwrap();
        let xi = point(g.dim(), r, a, b);
        let scaled: Vec<f64> = xi.iter().map(|x| x * t).collect();
        let phi = g.value(&xi).unwrap();
        let tol = if is_radial(&spec) { 1e-7 } else { 1e-10 };
        prop_assert!((g.value(&scaled).unwrap() - t * phi).abs() <= tol * t * phi);
        let jet = g.jet(&xi).unwrap();
        let x = nalgebra::DVector::from_column_slice(&xi);
        prop_assert!((jet.gradient.dot(&x) - phi).abs() <= 1e-8 * phi);
        prop_assert!((&jet.hessian * &x).norm() <= 1e-6 * jet.hessian.norm() * x.norm() + 1e-14);
        let min_eig = jet.hessian.clone().symmetric_eigen().eigenvalues.min();
        prop_assert!(min_eig >= -1e-8, "{min_eig}");
    }

    #[test]
    fn weight_degree_zero_and_sign(
        spec in prop::sample::select(planar_specs()),
        r in 0.2f64..5.0,
        a in 0.0f64..TAU,
        t in 0.1f64..10.0,
    ) {
        let g = Gauge::new(spec).unwrap();
        let conv = WeightConvention::PositiveAdjugate;
        let xi = point(2, r, a, 0.0);
        let scaled: Vec<f64> = xi.iter().map(|x| x * t).collect();
        let w = weight(&g, &xi, conv).unwrap();
        let wt = weight(&g, &scaled, conv).unwrap();
        prop_assert!((wt - w).abs() <= 1e-8 * w.abs().max(1e-12) + 1e-14, "{w} {wt}");
        prop_assert!(w >= -1e-10);
    }

    #[test]
    fn affine_covariance(
        spec in prop::sample::select(planar_specs()),
        m in prop::array::uniform4(-2.0f64..2.0),
        r in 0.2f64..2.0,
        a in 0.0f64..TAU,
    ) {
        let x = DMatrix::from_row_slice(2, 2, &m);
        prop_assume!(x.determinant().abs() >= 0.1);
        let g = Gauge::new(spec).unwrap();
        let res = affine_covariance_residual(&g, &x, &point(2, r, a, 0.0), WeightConvention::default()).unwrap();
        prop_assert!(res <= 1e-6, "{res}");
    }

    #[test]
    fn lorentz_nesting_and_permutation(
        samples in prop::collection::vec((0.0f64..10.0, 0.01f64..3.0), 1..40),
        q in 1.0f64..4.0,
        r in 1.0f64..6.0,
        seed in any::<u64>(),
    ) {
        let f = SampledFunction::new(samples.clone()).unwrap();
        let weak = lorentz_norm(&f, q, f64::INFINITY).unwrap();
        let strong = lorentz_norm(&f, q, r).unwrap();
        // Under this convention an indicator has ‖·‖_{q,r} = (q/r)^{1/r}·m^{1/q},
        // so the sharp nesting carries the factor (r/q)^{1/r}.
        let nest = (r / q).powf(1.0 / r);
        prop_assert!(weak <= nest * strong * (1.0 + 1e-12), "{weak} {strong}");
        let mut shuffled = samples;
        let mut state = seed;
        for i in (1..shuffled.len()).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (state >> 33) as usize % (i + 1));
        }
        let g = SampledFunction::new(shuffled).unwrap();
        prop_assert_eq!(lorentz_norm(&g, q, r).unwrap(), strong);
        prop_assert_eq!(lorentz_norm(&g, q, f64::INFINITY).unwrap(), weak);
    }
}

#[test]
fn sigma_points_lie_on_the_unit_level_set() {
    for spec in planar_specs() {
        let g = Gauge::new(spec).unwrap();
        for i in 0..1024 {
            let s = sigma_point(&g, TAU * i as f64 / 1024.0).unwrap();
            let phi = g.value(&s.point).unwrap();
            assert!((phi - 1.0).abs() <= 1e-10, "{} at {i}: {phi}", g.label());
        }
    }
}

#[test]
fn circle_weight_is_one() {
    let g = Gauge::new(GaugeSpec::circle()).unwrap();
    for i in 0..1000 {
        let th = TAU * (i as f64 + 0.3) / 1000.0;
        let r = 0.5 + (i % 7) as f64;
        let w = weight(&g, &[r * th.cos(), r * th.sin()], WeightConvention::PositiveAdjugate).unwrap();
        assert!((w - 1.0).abs() <= 1e-10);
    }
}

#[test]
fn sphere_curvature_identity() {
    let g = Gauge::new(GaugeSpec::euclidean(3)).unwrap();
    for p in [[1.0, 0.0, 0.0], [0.0, 0.6, 0.8], [0.48, 0.6, 0.64]] {
        let res = conelab::weight::curvature_identity_residual_nd(&g, &p, WeightConvention::default()).unwrap();
        assert!(res <= 1e-8, "{res}");
    }
}

#[test]
fn histogram_is_complete() {
    for spec in planar_specs() {
        let g = Gauge::new(spec).unwrap();
        let h = sublevel_histogram(&g, WeightConvention::default(), 1 << 14).unwrap();
        let total = h.total_arclength();
        // Inscribed-polygon perimeter on 2^16 vertices.
        let n = 1 << 16;
        let pts: Vec<[f64; 2]> = (0..=n).map(|i| sigma_point(&g, TAU * i as f64 / n as f64).unwrap().point).collect();
        let oracle: f64 = pts.windows(2).map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1])).sum();
        assert!((total - oracle).abs() <= 1e-6 * oracle, "{} {total} {oracle}", g.label());
    }
}

#[test]
fn extension_bounded_by_total_mass() {
    for spec in [GaugeSpec::circle(), GaugeSpec::superellipse(4)] {
        let g = Arc::new(Gauge::new(spec).unwrap());
        let mu = WeightedConeMeasure::full_cone(g);
        let u = ConeDensity::gaussian(PI);
        let mass = cone_norm(&u, &mu, 1.0, QuadScheme::default(), Refinement::default()).unwrap();
        for (x, t) in [(Vector2::new(0.0, 0.0), 0.0), (Vector2::new(0.5, -0.2), 0.7), (Vector2::new(-1.5, 2.0), -3.0)] {
            let v = extension_eval(&u, x, t, &mu, ExtensionOptions::default()).unwrap();
            assert!(v.value.norm() <= mass.value * (1.0 + 1e-8), "{} vs {}", v.value.norm(), mass.value);
        }
    }
}
