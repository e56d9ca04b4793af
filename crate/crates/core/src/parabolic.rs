//! Explicit finite-volume solver for `u_t = div A(Du)` with zero-flux
//! boundary conditions, the Neumann-Poisson solve for the initial vector
//! potential, and assembly of the subsolution datum `(u*, v*)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{
    node_divergence, node_gradient, space_integral, BoundaryStencil, GridSpec, ScalarField, VectorField,
};
use crate::flux::{sigma_into, FluxProfile};
use crate::hull::{classify, Membership, ReducedPoint};

/// A radial flux `A(p) = a(|p|) p / |p|`.
pub trait RadialFlux: Sync {
    fn flux_into(&self, p: &[f64], out: &mut [f64]);
    /// Upper bound on the ellipticity, used for the explicit step limit.
    fn upper_ellipticity(&self) -> f64;
}

impl RadialFlux for FluxProfile {
    fn flux_into(&self, p: &[f64], out: &mut [f64]) {
        FluxProfile::flux_into(self, p, out)
    }

    fn upper_ellipticity(&self) -> f64 {
        self.theta_upper
    }
}

/// The Perona-Malik flux itself; forward parabolic only for `|p| < 1`.
#[derive(Debug, Clone, Copy, Default)]
pub struct PeronaMalik;

impl RadialFlux for PeronaMalik {
    fn flux_into(&self, p: &[f64], out: &mut [f64]) {
        sigma_into(p, out)
    }

    fn upper_ellipticity(&self) -> f64 {
        1.0
    }
}

/// Solves the forward problem from `u0` (one spatial slice) and stores
/// `nt + 1` levels. The mean of `u0` is removed first.
pub fn solve_regularized<F: RadialFlux>(u0: &[f64], flux: &F, grid: &GridSpec) -> Result<ScalarField> {
    if u0.len() != grid.n_space() {
        return Err(Error::Domain(format!(
            "initial datum has {} nodes, grid expects {}",
            u0.len(),
            grid.n_space()
        )));
    }
    if u0.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("initial datum is not finite".into()));
    }
    let limit = grid.stable_step(flux.upper_ellipticity());
    if grid.inner_dt() > limit * (1.0 + 1e-12) {
        return Err(Error::Stability(format!(
            "inner step {:e} exceeds {:e}",
            grid.inner_dt(),
            limit
        )));
    }
    let weights = grid.space_weights();
    let mean = space_integral(&weights, u0) / grid.domain.volume();
    let mut cur: Vec<f64> = u0.iter().map(|x| x - mean).collect();

    let mut field = ScalarField::zeros(grid);
    field.slice_mut(0).copy_from_slice(&cur);
    let mut stepper = Stepper::new(grid);
    for k in 1..grid.n_levels() {
        for _ in 0..grid.substeps {
            stepper.step(&mut cur, flux, grid.inner_dt());
        }
        if cur.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!("non-finite value at stored level {k}")));
        }
        field.slice_mut(k).copy_from_slice(&cur);
    }
    Ok(field)
}

struct Stepper {
    grid: GridSpec,
    rate: Vec<f64>,
    central: Vec<Vec<f64>>,
    p: Vec<f64>,
    a: Vec<f64>,
}

impl Stepper {
    fn new(grid: &GridSpec) -> Self {
        let n = grid.dim();
        Self {
            grid: grid.clone(),
            rate: vec![0.0; grid.n_space()],
            central: vec![vec![0.0; grid.n_space()]; n],
            p: vec![0.0; n],
            a: vec![0.0; n],
        }
    }

    /// One forward Euler step of the dual-cell scheme. Boundary cells have
    /// half width and no flux crosses the outer faces, so the trapezoid
    /// mass is conserved up to rounding.
    fn step<F: RadialFlux>(&mut self, u: &mut [f64], flux: &F, dt: f64) {
        let g = &self.grid;
        let n = g.dim();
        let nx = g.nx;
        if n > 1 {
            self.central = node_gradient(g, u, BoundaryStencil::Reflect);
        }
        self.rate.iter_mut().for_each(|r| *r = 0.0);
        for a in 0..n {
            let stride = g.stride(a);
            let h = g.h(a);
            for s in 0..u.len() {
                let i = (s / stride) % nx;
                if i == nx - 1 {
                    continue;
                }
                let t = s + stride;
                for b in 0..n {
                    self.p[b] = if b == a {
                        (u[t] - u[s]) / h
                    } else {
                        0.5 * (self.central[b][s] + self.central[b][t])
                    };
                }
                flux.flux_into(&self.p, &mut self.a);
                let f = self.a[a];
                let cs = if i == 0 { 0.5 * h } else { h };
                let ct = if i + 1 == nx - 1 { 0.5 * h } else { h };
                self.rate[s] += f / cs;
                self.rate[t] -= f / ct;
            }
        }
        for (x, r) in u.iter_mut().zip(&self.rate) {
            *x += dt * r;
        }
    }
}

/// Per-level diagnostics of a forward solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelDiagnostics {
    pub level: usize,
    pub time: f64,
    pub mass: f64,
    pub max_gradient: f64,
}

pub fn level_diagnostics(field: &ScalarField) -> Vec<LevelDiagnostics> {
    let g = &field.grid;
    let w = g.space_weights();
    (0..g.n_levels())
        .map(|k| LevelDiagnostics {
            level: k,
            time: g.time(k),
            mass: space_integral(&w, field.slice(k)),
            max_gradient: max_gradient(g, field.slice(k)),
        })
        .collect()
}

/// Largest node gradient norm of a slice with the reflecting stencil.
pub fn max_gradient(grid: &GridSpec, slice: &[f64]) -> f64 {
    let d = node_gradient(grid, slice, BoundaryStencil::Reflect);
    (0..slice.len())
        .map(|s| d.iter().map(|c| c[s] * c[s]).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradientReport {
    pub initial: f64,
    pub max_ratio: f64,
    pub threshold: f64,
    pub passed: bool,
}

/// Checks `max_x |Du(., t)| <= (1 + 10 h) max_x |Du(., 0)|` at every level.
pub fn check_gradient_max_principle(u: &ScalarField) -> GradientReport {
    let g = &u.grid;
    let initial = max_gradient(g, u.slice(0));
    let mut max_ratio: f64 = 0.0;
    for k in 0..g.n_levels() {
        let m = max_gradient(g, u.slice(k));
        let r = if initial > 0.0 { m / initial } else if m > 0.0 { f64::INFINITY } else { 1.0 };
        max_ratio = max_ratio.max(r);
    }
    let threshold = 1.0 + 10.0 * g.h_max();
    GradientReport {
        initial,
        max_ratio,
        threshold,
        passed: max_ratio <= threshold,
    }
}

fn reflect(i: isize, n: usize) -> usize {
    let last = (n - 1) as isize;
    let mut j = i;
    if j < 0 {
        j = -j;
    }
    if j > last {
        j = 2 * last - j;
    }
    j as usize
}

/// Fourth-order Neumann Laplacian with even reflection.
///
/// Under even reflection the stencil is the restriction of a symmetric
/// circulant, so the operator is self-adjoint for the trapezoid inner product.
pub fn neumann_laplacian(grid: &GridSpec, u: &[f64]) -> Vec<f64> {
    let nx = grid.nx;
    let mut out = vec![0.0; u.len()];
    for a in 0..grid.dim() {
        let stride = grid.stride(a);
        let h2 = grid.h(a) * grid.h(a);
        for (s, o) in out.iter_mut().enumerate() {
            let i = ((s / stride) % nx) as isize;
            let base = s - (i as usize) * stride;
            let at = |d: isize| u[base + reflect(i + d, nx) * stride];
            *o += (-at(-2) + 16.0 * at(-1) - 30.0 * at(0) + 16.0 * at(1) - at(2)) / (12.0 * h2);
        }
    }
    out
}

/// Solves `Lap h = u0` with zero normal derivative and zero mean by
/// conjugate gradients in the trapezoid inner product.
pub fn solve_neumann_poisson(u0: &[f64], grid: &GridSpec) -> Result<Vec<f64>> {
    if grid.nx < 3 {
        return Err(Error::Domain("Poisson solve needs at least three nodes per axis".into()));
    }
    let w = grid.space_weights();
    let vol = grid.domain.volume();
    let scale = u0.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mean = space_integral(&w, u0) / vol;
    if mean.abs() > 1e-10 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Precondition(format!("datum has nonzero mean {mean:e}")));
    }
    if scale == 0.0 {
        return Ok(vec![0.0; u0.len()]);
    }
    let wdot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).zip(&w).map(|((x, y), z)| x * y * z).sum() };
    let project = |v: &mut Vec<f64>| {
        let m = space_integral(&w, v) / vol;
        v.iter_mut().for_each(|x| *x -= m);
    };
    // K = -Lap is positive semidefinite; solve K h = -u0
    let apply = |v: &[f64]| -> Vec<f64> { neumann_laplacian(grid, v).iter().map(|x| -x).collect() };
    let mut h = vec![0.0; u0.len()];
    let mut r: Vec<f64> = u0.iter().map(|x| -(x - mean)).collect();
    let mut p = r.clone();
    let mut rr = wdot(&r, &r);
    let target = 1e-10 * scale;
    let max_iter = 40 * u0.len() + 100;
    for it in 0..max_iter {
        let kp = apply(&p);
        let alpha = rr / wdot(&p, &kp);
        h.iter_mut().zip(&p).for_each(|(x, d)| *x += alpha * d);
        r.iter_mut().zip(&kp).for_each(|(x, d)| *x -= alpha * d);
        project(&mut r);
        let rr_new = wdot(&r, &r);
        if it % 16 == 0 || rr_new.sqrt() < target {
            project(&mut h);
            let res = neumann_laplacian(grid, &h)
                .iter()
                .zip(u0)
                .fold(0.0f64, |m, (lh, u)| m.max((lh - (u - mean)).abs()));
            if res <= target {
                return Ok(h);
            }
        }
        let beta = rr_new / rr;
        p.iter_mut().zip(&r).for_each(|(d, x)| *d = x + beta * *d);
        rr = rr_new;
    }
    Err(Error::Numerical("Poisson solve did not converge".into()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatumReport {
    pub removed_mean: f64,
    pub max_divergence_defect: f64,
    pub max_normal_trace: f64,
    pub gradient: GradientReport,
    pub graph_fraction: f64,
    pub hull_fraction: f64,
    pub violation_fraction: f64,
}

/// The subsolution pair built from the forward solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundaryDatum {
    pub profile: FluxProfile,
    pub grid: GridSpec,
    pub u: ScalarField,
    pub v: VectorField,
    pub du: VectorField,
    pub ut: ScalarField,
    pub vt: VectorField,
    /// Measured `max |Du0|`.
    pub m: f64,
    /// `max |u*_t| + 1`.
    pub mu: f64,
    pub report: DatumReport,
}

/// Largest fraction of datum nodes allowed outside `K_delta` and `S_delta`.
pub const MEMBERSHIP_VIOLATION_LIMIT: f64 = 0.01;

pub fn build_boundary_datum(u0: &[f64], profile: &FluxProfile, grid: &GridSpec) -> Result<BoundaryDatum> {
    if profile.dim != grid.dim() {
        return Err(Error::Domain(format!(
            "profile dimension {} does not match grid dimension {}",
            profile.dim,
            grid.dim()
        )));
    }
    let weights = grid.space_weights();
    let removed_mean = space_integral(&weights, u0) / grid.domain.volume();
    let u = solve_regularized(u0, profile, grid)?;
    let datum = assemble_datum(u, profile, profile, removed_mean)?;
    if datum.report.violation_fraction > MEMBERSHIP_VIOLATION_LIMIT {
        return Err(Error::certificate(
            "datum-membership",
            format!(
                "{:.3}% of nodes lie outside K_delta and S_delta",
                100.0 * datum.report.violation_fraction
            ),
        ));
    }
    Ok(datum)
}

/// Builds the pair `(u, v)` from a stored solution: `v_t = flux(Du)` and
/// `v(0) = Dh` with `Lap h = u(0)`. Membership is reported, not enforced.
pub fn assemble_datum<F: RadialFlux>(
    u: ScalarField,
    flux: &F,
    profile: &FluxProfile,
    removed_mean: f64,
) -> Result<BoundaryDatum> {
    let grid = &u.grid.clone();
    let n = grid.dim();
    let ns = grid.n_space();
    let levels = grid.n_levels();

    let h0 = solve_neumann_poisson(u.slice(0), grid)?;
    let v0 = node_gradient(grid, &h0, BoundaryStencil::Reflect);

    let mut du = VectorField::zeros(grid);
    let mut vt = VectorField::zeros(grid);
    let mut pbuf = vec![0.0; n];
    let mut abuf = vec![0.0; n];
    for k in 0..levels {
        let g = node_gradient(grid, u.slice(k), BoundaryStencil::Reflect);
        for s in 0..ns {
            for a in 0..n {
                pbuf[a] = g[a][s];
            }
            flux.flux_into(&pbuf, &mut abuf);
            for a in 0..n {
                du.components[a][k * ns + s] = pbuf[a];
                vt.components[a][k * ns + s] = abuf[a];
            }
        }
    }

    // v* = v0 + int_0^t A(Du*) by the trapezoid rule in time
    let dt = grid.dt();
    let mut v = VectorField::zeros(grid);
    for a in 0..n {
        let comp = &mut v.components[a];
        comp[..ns].copy_from_slice(&v0[a]);
        for k in 1..levels {
            for s in 0..ns {
                let inc = 0.5 * dt * (vt.components[a][(k - 1) * ns + s] + vt.components[a][k * ns + s]);
                comp[k * ns + s] = comp[(k - 1) * ns + s] + inc;
            }
        }
    }

    let mut ut = ScalarField::zeros(grid);
    for k in 0..levels {
        for s in 0..ns {
            let d = if k == 0 {
                (u.at(1, s) - u.at(0, s)) / dt
            } else if k == levels - 1 {
                (u.at(k, s) - u.at(k - 1, s)) / dt
            } else {
                (u.at(k + 1, s) - u.at(k - 1, s)) / (2.0 * dt)
            };
            ut.values[k * ns + s] = d;
        }
    }

    let m = max_gradient(grid, u.slice(0));
    let mu = ut.sup() + 1.0;

    let mut max_div: f64 = 0.0;
    let mut max_normal: f64 = 0.0;
    for k in 0..levels {
        let comps: Vec<&[f64]> = (0..n).map(|a| v.component_slice(a, k)).collect();
        let div = node_divergence(grid, &comps);
        for s in 0..ns {
            let idx = grid.multi_index(s);
            let interior = idx.iter().all(|&i| i > 0 && i < grid.nx - 1);
            if interior {
                max_div = max_div.max((div[s] - u.at(k, s)).abs());
            }
            for (a, &i) in idx.iter().enumerate() {
                if i == 0 || i == grid.nx - 1 {
                    max_normal = max_normal.max(comps[a][s].abs());
                }
            }
        }
    }

    let total = (ns * levels) as f64;
    let (mut graph, mut hull, mut outside) = (0usize, 0usize, 0usize);
    for k in 0..levels {
        for s in 0..ns {
            let pt = ReducedPoint::new(du.at(k, s), vt.at(k, s));
            match classify(&pt, profile.delta, profile.m_minus) {
                Membership::Graph => graph += 1,
                Membership::Hull => hull += 1,
                Membership::Outside => outside += 1,
            }
        }
    }
    let report = DatumReport {
        removed_mean,
        max_divergence_defect: max_div,
        max_normal_trace: max_normal,
        gradient: check_gradient_max_principle(&u),
        graph_fraction: graph as f64 / total,
        hull_fraction: hull as f64 / total,
        violation_fraction: outside as f64 / total,
    };
    Ok(BoundaryDatum {
        profile: profile.clone(),
        grid: grid.clone(),
        u,
        v,
        du,
        ut,
        vt,
        m,
        mu,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::BoxDomain;

    #[test]
    fn cosine_is_discrete_eigenfunction() {
        let g = GridSpec::new(BoxDomain::unit(1), 1.0, 129, 1, 1_000_000, 1.0).unwrap();
        let u: Vec<f64> = (0..129).map(|i| (std::f64::consts::PI * g.coord(0, i)).cos()).collect();
        let h = solve_neumann_poisson(&u, &g).unwrap();
        for (i, hv) in h.iter().enumerate() {
            let exact = -(std::f64::consts::PI * g.coord(0, i)).cos() / std::f64::consts::PI.powi(2);
            assert!((hv - exact).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_datum_stays_zero() {
        let g = GridSpec::with_auto_substeps(BoxDomain::unit(1), 0.1, 33, 4, 1.0).unwrap();
        let u = solve_regularized(&vec![0.0; 33], &PeronaMalik, &g).unwrap();
        assert!(u.sup() == 0.0);
    }
}
