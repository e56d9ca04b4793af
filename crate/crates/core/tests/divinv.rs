use std::f64::consts::PI;

use cvxint::divinv::{
    discrete_divergence, inverse_ratio, measure_inverse_constant, random_smooth_field, right_inverse_spacetime,
    right_inverse_static, BumpProfile,
};
use cvxint::domain::BoxDomain;
use ndarray::{ArrayD, Axis, IxDyn};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sup(a: &ArrayD<f64>) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn field(domain: &BoxDomain, n: usize, seed: u64) -> ArrayD<f64> {
    random_smooth_field(domain, n, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn constant_on_zero_two_integrates_to_x() {
    let d = BoxDomain::new(vec![(0.0, 2.0)]).unwrap();
    let v = right_inverse_static(&ArrayD::from_elem(IxDyn(&[41]), 1.0), &d).unwrap();
    for (i, x) in d.nodes(0, 41).iter().enumerate() {
        assert!((v[0][[i]] - x).abs() < 1e-12);
    }
}

#[test]
fn cosine_has_sine_antiderivative() {
    // v = sin(pi x)/pi, second order in h
    let d = BoxDomain::unit(1);
    let mut errs = Vec::new();
    for n in [33, 65] {
        let xs = d.nodes(0, n);
        let u = ArrayD::from_shape_fn(IxDyn(&[n]), |i| (PI * xs[i[0]]).cos());
        let v = right_inverse_static(&u, &d).unwrap();
        errs.push(xs.iter().enumerate().map(|(i, x)| (v[0][[i]] - (PI * x).sin() / PI).abs()).fold(0.0, f64::max));
    }
    assert!(errs[0] < 1e-3 && errs[0] / errs[1] > 3.5, "{errs:?}");
}

#[test]
fn zero_maps_to_zero() {
    for dim in [1, 2, 3] {
        let d = BoxDomain::unit(dim);
        let v = right_inverse_static(&ArrayD::zeros(IxDyn(&vec![9; dim])), &d).unwrap();
        assert!(v.iter().all(|c| sup(c) == 0.0));
    }
    let s = right_inverse_spacetime(&ArrayD::zeros(IxDyn(&[5, 9, 9])), &BoxDomain::unit(2)).unwrap();
    assert!(s.components.iter().all(|c| sup(c) == 0.0) && !s.mean_warning);
}

#[test]
fn divergence_error_is_first_order() {
    let d = BoxDomain::unit(2);
    let mut ratios = Vec::new();
    for n in [33, 65, 129, 257] {
        let h = 1.0 / (n - 1) as f64;
        let xs = d.nodes(0, n);
        let u = ArrayD::from_shape_fn(IxDyn(&[n, n]), |i| (2.0 * PI * xs[i[0]]).sin());
        let v = right_inverse_static(&u, &d).unwrap();
        ratios.push(sup(&(&discrete_divergence(&v, &d) - &u)) / h);
    }
    // err / h settles to a constant
    for w in ratios.windows(2) {
        assert!((w[1] / w[0] - 1.0).abs() < 0.05, "{ratios:?}");
    }
}

#[test]
fn mean_zero_field_has_vanishing_normal_trace() {
    let d = BoxDomain::new(vec![(0.0, 1.0), (0.0, 2.0)]).unwrap();
    let u = field(&d, 49, 11);
    let v = right_inverse_static(&u, &d).unwrap();
    let scale = sup(&u);
    for (k, c) in v.iter().enumerate() {
        let m = c.shape()[k];
        for face in [0, m - 1] {
            let t = sup(&c.index_axis(Axis(k), face).to_owned());
            assert!(t < 1e-2 * scale, "component {k}, face {face}: {t}");
        }
    }
}

#[test]
fn spacetime_product_vanishes_on_the_boundary() {
    // phi has zero mean and vanishes on the boundary of the unit square; psi vanishes at both ends of I
    let d = BoxDomain::unit(2);
    let (n, nt) = (33, 17);
    let xs = d.nodes(0, n);
    let ts: Vec<f64> = (0..nt).map(|k| k as f64 / (nt - 1) as f64).collect();
    let phi = |x: f64, y: f64| (2.0 * PI * x).sin() * (PI * y).sin().powi(2);
    let u = ArrayD::from_shape_fn(IxDyn(&[nt, n, n]), |i| {
        phi(xs[i[1]], xs[i[2]]) * (PI * ts[i[0]]).sin()
    });
    let s = right_inverse_spacetime(&u, &d).unwrap();
    assert!(!s.mean_warning, "mean {}", s.max_slice_mean);
    let h = 1.0 / (n - 1) as f64;
    for (k, c) in s.components.iter().enumerate() {
        for face in [0, nt - 1] {
            assert!(sup(&c.index_axis(Axis(0), face).to_owned()) < 1e-12);
        }
        let m = c.shape()[k + 1];
        for face in [0, m - 1] {
            assert!(sup(&c.index_axis(Axis(k + 1), face).to_owned()) < 5.0 * h);
        }
    }
}

#[test]
fn time_derivative_commutes_with_inverse() {
    let d = BoxDomain::unit(2);
    let (n, nt) = (25, 65);
    let dt = 1.0 / (nt - 1) as f64;
    let xs = d.nodes(0, n);
    let phi = |x: f64, y: f64| (PI * x).cos() * (2.0 * PI * y).cos();
    let u = ArrayD::from_shape_fn(IxDyn(&[nt, n, n]), |i| {
        phi(xs[i[1]], xs[i[2]]) * (3.0 * i[0] as f64 * dt).sin()
    });
    let ut = ArrayD::from_shape_fn(IxDyn(&[nt, n, n]), |i| {
        phi(xs[i[1]], xs[i[2]]) * 3.0 * (3.0 * i[0] as f64 * dt).cos()
    });
    let v = right_inverse_spacetime(&u, &d).unwrap();
    let vt = right_inverse_spacetime(&ut, &d).unwrap();
    let scale = sup(&vt.components[0]).max(sup(&vt.components[1]));
    for c in 0..2 {
        let a = &v.components[c];
        for k in 1..nt - 1 {
            let fd = (&a.index_axis(Axis(0), k + 1) - &a.index_axis(Axis(0), k - 1)) / (2.0 * dt);
            let err = sup(&(fd - vt.components[c].index_axis(Axis(0), k)).into_dyn());
            assert!(err < 10.0 * dt * dt * scale.max(1.0), "slice {k}: {err}");
        }
    }
}

#[test]
fn slices_match_static_inverse_exactly() {
    let d = BoxDomain::unit(2);
    let slices: Vec<ArrayD<f64>> = (0..4).map(|s| field(&d, 17, s)).collect();
    let views: Vec<_> = slices.iter().map(|a| a.view()).collect();
    let u = ndarray::stack(Axis(0), &views).unwrap();
    let st = right_inverse_spacetime(&u, &d).unwrap();
    for (k, s) in slices.iter().enumerate() {
        let v = right_inverse_static(s, &d).unwrap();
        for c in 0..2 {
            assert_eq!(st.components[c].index_axis(Axis(0), k), v[c].view());
        }
    }
}

#[test]
fn nonzero_slice_mean_raises_warning() {
    let u = ArrayD::from_elem(IxDyn(&[3, 9, 9]), 1.0);
    let s = right_inverse_spacetime(&u, &BoxDomain::unit(2)).unwrap();
    assert!(s.mean_warning && (s.max_slice_mean - 1.0).abs() < 1e-12);
}

#[test]
fn bump_profile_is_a_unit_mass_bump() {
    let b = BumpProfile::new(0.5, 2.0);
    let len = 1.5;
    assert!(b.value(0.5) == 0.0 && b.value(2.0) == 0.0 && b.value(3.0) == 0.0);
    assert!((b.cumulative(2.0) - 1.0).abs() < 1e-12 && b.cumulative(0.5) == 0.0);
    let n = 20_000;
    let h = len / n as f64;
    let mass: f64 = (0..n).map(|i| b.value(0.5 + (i as f64 + 0.5) * h) * h).sum();
    assert!((mass - 1.0).abs() < 1e-10);
    let peak = (0..=n).map(|i| b.value(0.5 + i as f64 * h)).fold(0.0, f64::max);
    assert!(peak <= b.scaled_peak() / len + 1e-12 && peak >= 0.0);
}

#[test]
fn one_dimensional_constant_is_at_most_one() {
    let c = measure_inverse_constant(&BoxDomain::unit(1), 50, 3, 65).unwrap();
    assert!(c > 0.0 && c <= 1.0, "{c}");
}

#[test]
fn constant_is_a_running_supremum() {
    let d = BoxDomain::unit(2);
    let mut last = 0.0;
    for trials in [1, 3, 6, 12] {
        let c = measure_inverse_constant(&d, trials, 9, 17).unwrap();
        assert!(c >= last && c.is_finite());
        last = c;
    }
}

#[test]
fn ratio_respects_measured_constant() {
    let d = BoxDomain::unit(2);
    let c = measure_inverse_constant(&d, 10, 4, 17).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let u = random_smooth_field(&d, 17, &mut rng);
        if sup(&u) > 1e-12 {
            assert!(inverse_ratio(&u, &d).unwrap() <= c);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn inverse_is_linear(s1 in 0u64..1000, s2 in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let d = BoxDomain::new(vec![(0.0, 1.5), (-1.0, 1.0)]).unwrap();
        let (u, w) = (field(&d, 17, s1), field(&d, 17, s2));
        let combo = &u * a + &w * b;
        let (ru, rw, rc) = (
            right_inverse_static(&u, &d).unwrap(),
            right_inverse_static(&w, &d).unwrap(),
            right_inverse_static(&combo, &d).unwrap(),
        );
        for k in 0..2 {
            let diff = sup(&(&rc[k] - &(&ru[k] * a + &rw[k] * b)));
            prop_assert!(diff < 1e-12 * (1.0 + sup(&rc[k])));
        }
    }
}
