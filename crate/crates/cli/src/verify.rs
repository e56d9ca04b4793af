use std::f64::consts::PI;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use cvxint::convint::{build_patch, PatchOptions};
use cvxint::divinv::{discrete_divergence, measure_inverse_constant, right_inverse_static};
use cvxint::domain::BoxDomain;
use cvxint::field::{space_integral, GridSpec};
use cvxint::flux::build_profile;
use cvxint::hull::{
    brute_force_hull_oracle, rank_one_decompose, s_delta_bounds_check, sample_lamination_points, ReducedPoint,
};
use cvxint::parabolic::{check_gradient_max_principle, solve_neumann_poisson, solve_regularized};
use cvxint::Result;
use ndarray::{ArrayD, IxDyn};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Quick,
    Full,
}

impl std::str::FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "quick" => Ok(Level::Quick),
            "full" => Ok(Level::Full),
            other => Err(format!("unknown level `{other}` (quick or full)")),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyRow {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub level: Level,
    pub seed: u64,
    pub rows: Vec<VerifyRow>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            let mark = if r.passed { "PASS" } else { "FAIL" };
            out.push_str(&format!("{mark}  {:<24} {:>7.2}s  {}\n", r.name, r.seconds, r.detail));
        }
        out
    }
}

fn row(name: &str, f: impl FnOnce() -> Result<(bool, String)>) -> VerifyRow {
    let t = Instant::now();
    let (passed, detail) = f().unwrap_or_else(|e| (false, e.to_string()));
    VerifyRow {
        name: name.to_string(),
        passed,
        detail,
        seconds: t.elapsed().as_secs_f64(),
    }
}

/// Runs the property checks of every module and collects a pass/fail table.
pub fn verify_suite(level: Level, seed: u64) -> VerifyReport {
    let full = level == Level::Full;
    let rows = vec![
        row("profile", || {
            let mut worst = String::new();
            let mut ok = true;
            for (m, dim) in [(0.5, 1), (2.0, 1), (2.0, 2)] {
                let v = build_profile(m, 0.5, dim)?.validate(if full { 20_000 } else { 2_000 });
                ok &= v.passed;
                worst = format!("agreement {:.1e}", v.max_agreement_error);
            }
            Ok((ok, worst))
        }),
        row("hull-decomposition", || {
            let pt = ReducedPoint::new(vec![1.0, 0.0], vec![0.3, 0.0]);
            let f = rank_one_decompose(&pt, 0.1)?;
            let err = (f.t_plus - 2.0).abs()
                + (f.t_minus + 2.0 / 3.0).abs()
                + (f.q[0] - 1.0).abs()
                + f.q[1].abs()
                + f.gamma.iter().map(|g| g.abs()).sum::<f64>();
            let res = f.endpoint_residual(&pt);
            Ok((err < 1e-10 && res < 1e-12, format!("frame error {err:.1e}, endpoint residual {res:.1e}")))
        }),
        row("hull-oracle", || {
            let count = if full { 1000 } else { 40 };
            let inside = sample_lamination_points(2, count, -1.0, 0.01, seed);
            let outside = sample_lamination_points(2, count, 1.0, 0.01, seed.wrapping_add(1));
            let found = inside
                .par_iter()
                .enumerate()
                .filter(|(i, p)| brute_force_hull_oracle(p, 64, seed ^ *i as u64))
                .count();
            let false_pos = outside
                .par_iter()
                .enumerate()
                .filter(|(i, p)| brute_force_hull_oracle(p, 64, seed ^ *i as u64))
                .count();
            Ok((
                found == count && false_pos == 0,
                format!("{found}/{count} inside split, {false_pos}/{count} outside split"),
            ))
        }),
        row("s-delta-envelope", || {
            let samples = if full { 1_000_000 } else { 100_000 };
            let r = s_delta_bounds_check(0.3, samples, 2, seed)?;
            Ok((
                r.passed() && r.sup_p >= 2.95,
                format!(
                    "{} accepted, |p| in [{:.3}, {:.3}], |beta| in [{:.3}, {:.3}]",
                    r.accepted, r.inf_p, r.sup_p, r.inf_beta, r.sup_beta
                ),
            ))
        }),
        row("divinv-identity", || {
            let d1 = BoxDomain::new(vec![(0.0, 2.0)])?;
            let v = right_inverse_static(&ArrayD::from_elem(IxDyn(&[33]), 1.0), &d1)?;
            let xs = d1.nodes(0, 33);
            let line = xs.iter().enumerate().map(|(i, x)| (v[0][[i]] - x).abs()).fold(0.0, f64::max);
            let e64 = divergence_error(65)?;
            let e128 = divergence_error(129)?;
            let ratio = e64 / e128;
            Ok((
                line < 1e-12 && (1.5..=2.5).contains(&ratio),
                format!("u=1 error {line:.1e}; div error {e64:.2e} -> {e128:.2e} (ratio {ratio:.2})"),
            ))
        }),
        row("divinv-constant", || {
            let c1 = measure_inverse_constant(&BoxDomain::unit(1), 20, seed, 64)?;
            let c2 = measure_inverse_constant(&BoxDomain::unit(2), if full { 100 } else { 10 }, seed, 32)?;
            Ok((c1 <= 1.0 && c2.is_finite(), format!("C_1 = {c1:.3}, C_2 = {c2:.3}")))
        }),
        row("parabolic-conservation", || {
            let mut worst: f64 = 0.0;
            let mut grad_ok = true;
            for (u0, grid, prof) in catalog(full)? {
                let u = solve_regularized(&u0, &prof, &grid)?;
                let w = grid.space_weights();
                let m0 = space_integral(&w, u.slice(0));
                for k in 1..grid.n_levels() {
                    let drift = (space_integral(&w, u.slice(k)) - m0).abs() / (k * grid.substeps) as f64;
                    worst = worst.max(drift);
                }
                grad_ok &= check_gradient_max_principle(&u).passed;
            }
            Ok((worst <= 1e-12 && grad_ok, format!("mass drift per step {worst:.1e}, max principle {grad_ok}")))
        }),
        row("parabolic-poisson", || {
            let g = GridSpec::new(BoxDomain::unit(1), 1.0, 129, 1, 1_000_000, 1.0)?;
            let u: Vec<f64> = (0..129).map(|i| (PI * g.coord(0, i)).cos()).collect();
            let h = solve_neumann_poisson(&u, &g)?;
            let err = h
                .iter()
                .enumerate()
                .map(|(i, v)| (v + (PI * g.coord(0, i)).cos() / (PI * PI)).abs())
                .fold(0.0, f64::max);
            Ok((err <= 1e-6, format!("max error {err:.1e}")))
        }),
        row("patch-certificates", || {
            let opts = PatchOptions {
                samples_per_axis: if full { 64 } else { 16 },
                ..PatchOptions::default()
            };
            let targets = [
                ReducedPoint::new(vec![1.0], vec![0.3]),
                ReducedPoint::new(vec![1.0, 0.0], vec![0.3, 0.0]),
                ReducedPoint::new(vec![1.0, 0.5], vec![0.3, 0.0]),
            ];
            let mut worst_div: f64 = 0.0;
            for t in &targets {
                let region = BoxDomain::unit(t.dim()).with_time(0.0, 1.0)?;
                let p = build_patch(t, 0.1, &region, 1e-2, 0.1, 1.0, &opts)?;
                worst_div = worst_div.max(p.certificates.map(|c| c.max_div_psi).unwrap_or(f64::INFINITY));
            }
            Ok((worst_div <= 1e-8, format!("{} patches, max div psi {worst_div:.1e}", targets.len())))
        }),
    ];
    VerifyReport { level, seed, rows }
}

/// Max `|div R u - u|` for `u = sin(2 pi x_1)` on the unit square.
pub fn divergence_error(nodes: usize) -> Result<f64> {
    let d = BoxDomain::unit(2);
    let xs = d.nodes(0, nodes);
    let u = ArrayD::from_shape_fn(IxDyn(&[nodes, nodes]), |i| (2.0 * PI * xs[i[0]]).sin());
    let v = right_inverse_static(&u, &d)?;
    let div = discrete_divergence(&v, &d);
    Ok((&div - &u).iter().fold(0.0, |m, x| m.max(x.abs())))
}

type CatalogEntry = (Vec<f64>, GridSpec, cvxint::flux::FluxProfile);

/// Shipped initial data for the solver checks.
pub fn catalog(full: bool) -> Result<Vec<CatalogEntry>> {
    let nx = if full { 256 } else { 128 };
    let mut out = Vec::new();
    for (amp, mode, m) in [(2.0 / PI, 1u32, 2.0), (0.3 / PI, 2, 0.6)] {
        let prof = build_profile(m, 0.5, 1)?;
        let g = GridSpec::with_auto_substeps(BoxDomain::unit(1), 0.05, nx, 32, prof.theta_upper)?;
        let u0 = (0..nx).map(|i| amp * (mode as f64 * PI * g.coord(0, i)).cos()).collect();
        out.push((u0, g, prof));
    }
    let prof = build_profile(1.5, 0.5, 2)?;
    let n2 = if full { 64 } else { 32 };
    let g = GridSpec::with_auto_substeps(BoxDomain::unit(2), 0.02, n2, 16, prof.theta_upper)?;
    let amp = 1.5 / PI;
    let u0 = (0..g.n_space())
        .map(|s| {
            let x = g.position(s);
            amp * (PI * x[0]).cos() * (PI * x[1]).cos()
        })
        .collect();
    out.push((u0, g, prof));
    Ok(out)
}
