use std::f64::consts::PI;

use cvxint::domain::BoxDomain;
use cvxint::field::{space_integral, GridSpec};
use cvxint::flux::{build_profile, sigma, FluxProfile};
use cvxint::hull::{in_s_delta, ReducedPoint};
use cvxint::parabolic::{
    build_boundary_datum, check_gradient_max_principle, neumann_laplacian, solve_neumann_poisson, solve_regularized,
};
use cvxint::Error;
use proptest::prelude::*;

fn grid1(nx: usize, nt: usize, t: f64, p: &FluxProfile) -> GridSpec {
    GridSpec::with_auto_substeps(BoxDomain::unit(1), t, nx, nt, p.theta_upper).unwrap()
}

fn cosine(g: &GridSpec, amp: f64) -> Vec<f64> {
    (0..g.n_space()).map(|s| amp * (PI * g.position(s)[0]).cos()).collect()
}

#[test]
fn zero_stays_zero() {
    let p = build_profile(2.0, 0.5, 1).unwrap();
    let g = grid1(33, 8, 0.05, &p);
    let u = solve_regularized(&vec![0.0; 33], &p, &g).unwrap();
    assert_eq!(u.sup(), 0.0);
    let d = build_boundary_datum(&vec![0.0; 33], &p, &g).unwrap();
    assert_eq!(d.v.sup_norm(), 0.0);
    assert!(check_gradient_max_principle(&d.u).passed);
}

#[test]
fn unstable_grid_is_rejected() {
    let r = GridSpec::new(BoxDomain::unit(1), 1.0, 101, 10, 1, 3.0);
    assert!(matches!(r, Err(Error::Stability(_))));
}

#[test]
fn gradient_maximum_principle_holds() {
    let p = build_profile(2.0, 0.5, 1).unwrap();
    let g = grid1(129, 32, 0.1, &p);
    let r = check_gradient_max_principle(&solve_regularized(&cosine(&g, 2.0 / PI), &p, &g).unwrap());
    assert!(r.passed && (r.initial - 2.0).abs() < 1e-3, "{r:?}");

    let p2 = build_profile(1.5, 0.5, 2).unwrap();
    let g2 = GridSpec::with_auto_substeps(BoxDomain::unit(2), 0.02, 33, 8, p2.theta_upper).unwrap();
    let u0: Vec<f64> = (0..g2.n_space())
        .map(|s| {
            let x = g2.position(s);
            (1.5 / PI) * (PI * x[0]).cos() * (PI * x[1]).cos()
        })
        .collect();
    assert!(check_gradient_max_principle(&solve_regularized(&u0, &p2, &g2).unwrap()).passed);
}

#[test]
fn self_convergence_under_refinement() {
    let p = build_profile(2.0, 0.5, 1).unwrap();
    let mut finals = Vec::new();
    for nx in [33, 65, 129, 257] {
        let g = grid1(nx, 4, 0.02, &p);
        let u = solve_regularized(&cosine(&g, 2.0 / PI), &p, &g).unwrap();
        finals.push(u.slice(g.nt).to_vec());
    }
    // compare on the coarse nodes
    let diff = |a: &[f64], b: &[f64]| {
        let stride = (b.len() - 1) / (a.len() - 1);
        a.iter().enumerate().map(|(i, x)| (x - b[i * stride]).abs()).fold(0.0, f64::max)
    };
    let d: Vec<f64> = (0..3).map(|i| diff(&finals[i], &finals[i + 1])).collect();
    assert!(d[1] < d[0] && d[2] < d[1], "{d:?}");
    assert!(d[1] / d[2] > 1.8, "{d:?}");
}

#[test]
fn poisson_eigenfunction() {
    let g = GridSpec::new(BoxDomain::unit(2), 1.0, 65, 1, 1_000_000, 1.0).unwrap();
    let u: Vec<f64> = (0..g.n_space()).map(|s| (PI * g.position(s)[0]).cos()).collect();
    let h = solve_neumann_poisson(&u, &g).unwrap();
    let err = (0..g.n_space())
        .map(|s| (h[s] + (PI * g.position(s)[0]).cos() / (PI * PI)).abs())
        .fold(0.0, f64::max);
    assert!(err < 1e-5, "{err}");
    let res = neumann_laplacian(&g, &h)
        .iter()
        .zip(&u)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(res <= 1e-8, "{res}");
    assert!(space_integral(&g.space_weights(), &h).abs() < 1e-12);
}

#[test]
fn poisson_edge_cases() {
    let g = GridSpec::new(BoxDomain::unit(1), 1.0, 33, 1, 1_000_000, 1.0).unwrap();
    assert!(solve_neumann_poisson(&vec![0.0; 33], &g).unwrap().iter().all(|x| *x == 0.0));
    assert!(matches!(solve_neumann_poisson(&vec![1.0; 33], &g), Err(Error::Precondition(_))));
}

#[test]
fn datum_membership_and_graph_nodes() {
    let p = build_profile(2.0, 0.5, 1).unwrap();
    let g = grid1(129, 64, 0.1, &p);
    let d = build_boundary_datum(&cosine(&g, 2.0 / PI), &p, &g).unwrap();
    assert!(d.report.violation_fraction <= 0.01);
    let mut graph = 0;
    let mut hull = 0;
    for k in 0..g.n_levels() {
        for s in 0..g.n_space() {
            let q = d.du.at(k, s);
            let b = d.vt.at(k, s);
            if q[0].abs() <= p.m_minus {
                assert!((b[0] - sigma(&q)[0]).abs() < 1e-14);
                graph += 1;
            } else if q[0].abs() <= 2.0 && in_s_delta(&ReducedPoint::new(q, b), p.delta) {
                hull += 1;
            }
        }
    }
    assert!(graph > 0 && hull > 0);
    assert!(d.report.gradient.passed);
    let max_ut = (0..g.n_levels()).flat_map(|k| d.ut.slice(k).to_vec()).fold(0.0f64, |m, x| m.max(x.abs()));
    assert!((d.mu - max_ut - 1.0).abs() < 1e-12);
}

#[test]
fn datum_divergence_defect_shrinks() {
    let p = build_profile(2.0, 0.5, 1).unwrap();
    let mut defects = Vec::new();
    // the time quadrature of v is refined with the space grid
    for nx in [33, 65, 129] {
        let g = grid1(nx, nx - 1, 0.05, &p);
        let d = build_boundary_datum(&cosine(&g, 2.0 / PI), &p, &g).unwrap();
        assert!(d.report.max_normal_trace <= g.h_max(), "{}", d.report.max_normal_trace);
        defects.push(d.report.max_divergence_defect);
    }
    assert!(defects[0] / defects[1] > 1.5 && defects[1] / defects[2] > 1.5, "{defects:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn mass_is_conserved(a in prop::array::uniform4(-0.3f64..0.3), shift in -1.0f64..1.0) {
        let p = build_profile(2.0, 0.5, 1).unwrap();
        let g = grid1(65, 16, 0.05, &p);
        let u0: Vec<f64> = (0..65)
            .map(|s| {
                let x = g.position(s)[0];
                shift + a.iter().enumerate().map(|(m, c)| c * ((m + 1) as f64 * PI * x).cos()).sum::<f64>()
            })
            .collect();
        let u = solve_regularized(&u0, &p, &g).unwrap();
        let w = g.space_weights();
        let m0 = space_integral(&w, u.slice(0));
        prop_assert!(m0.abs() < 1e-12);
        for k in 1..g.n_levels() {
            let drift = (space_integral(&w, u.slice(k)) - m0).abs();
            prop_assert!(drift <= 1e-12 * (k * g.substeps) as f64);
        }
    }
}
