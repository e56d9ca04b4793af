//! Weak-form residuals of a pair against a catalog of smooth test functions.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::pair::AdmissiblePair;
use crate::field::{space_integral, GridSpec};
use crate::flux::{build_profile, sigma_into};
use crate::parabolic::{assemble_datum, solve_regularized, BoundaryDatum, PeronaMalik};
use crate::Result;

/// Smooth test functions on `[0,1]^n x [0,T]`; no boundary conditions needed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum TestFunction {
    /// `prod_a cos(m_a pi x_a + phase) * cos(omega t)`.
    Trig { modes: Vec<u32>, phase: f64, omega: f64 },
    /// `prod_a x_a^k_a (1 - x_a) * (1 + t)^j`.
    Poly { powers: Vec<i32>, time_power: i32 },
}

/// Value, time derivative and spatial gradient of a test function.
#[derive(Debug, Clone)]
pub struct TestJet {
    pub value: f64,
    pub dt: f64,
    pub grad: Vec<f64>,
}

impl TestFunction {
    pub fn name(&self) -> String {
        match self {
            TestFunction::Trig { modes, phase, omega } => format!("trig{modes:?}/{phase}/{omega}"),
            TestFunction::Poly { powers, time_power } => format!("poly{powers:?}/{time_power}"),
        }
    }

    pub fn jet(&self, x: &[f64], t: f64) -> TestJet {
        let n = x.len();
        let (f, df, tf, dtf): (Vec<f64>, Vec<f64>, f64, f64) = match self {
            TestFunction::Trig { modes, phase, omega } => {
                let f = (0..n).map(|a| (modes[a] as f64 * PI * x[a] + phase).cos()).collect();
                let df = (0..n)
                    .map(|a| {
                        let m = modes[a] as f64 * PI;
                        -m * (m * x[a] + phase).sin()
                    })
                    .collect();
                (f, df, (omega * t).cos(), -omega * (omega * t).sin())
            }
            TestFunction::Poly { powers, time_power } => {
                let f = (0..n).map(|a| x[a].powi(powers[a]) * (1.0 - x[a])).collect();
                let df = (0..n)
                    .map(|a| {
                        let k = powers[a];
                        let lead = if k == 0 { 0.0 } else { k as f64 * x[a].powi(k - 1) * (1.0 - x[a]) };
                        lead - x[a].powi(k)
                    })
                    .collect();
                let j = *time_power;
                let dtf = if j == 0 { 0.0 } else { j as f64 * (1.0 + t).powi(j - 1) };
                (f, df, (1.0 + t).powi(j), dtf)
            }
        };
        let prod: f64 = f.iter().product();
        let grad = (0..n)
            .map(|a| df[a] * (0..n).filter(|&b| b != a).map(|b| f[b]).product::<f64>() * tf)
            .collect();
        TestJet {
            value: prod * tf,
            dt: prod * dtf,
            grad,
        }
    }
}

/// Default catalog for dimension `dim`.
pub fn test_catalog(dim: usize) -> Vec<TestFunction> {
    let mut out = Vec::new();
    for m in [1u32, 2, 3] {
        let mut modes = vec![0u32; dim];
        modes[0] = m;
        out.push(TestFunction::Trig { modes, phase: 0.0, omega: 0.0 });
    }
    out.push(TestFunction::Trig {
        modes: vec![1; dim],
        phase: 0.4,
        omega: 5.0,
    });
    out.push(TestFunction::Poly {
        powers: vec![1; dim],
        time_power: 1,
    });
    out.push(TestFunction::Poly {
        powers: (0..dim as i32).map(|a| 2 + a).collect(),
        time_power: 2,
    });
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeakEntry {
    pub function: String,
    pub s: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeakFormReport {
    pub entries: Vec<WeakEntry>,
    pub max_abs: f64,
    /// Largest `|int v . Dzeta + int u zeta|` over the sampled times.
    pub divergence_identity: f64,
    /// Largest `|Dzeta|` over the grid and catalog.
    pub max_grad_zeta: f64,
    pub residual: f64,
    /// `residual * max_grad_zeta + 1e-4`.
    pub bound: f64,
    pub within_bound: bool,
}

/// Evaluates the weak formulation at `s` in `{T/4, T/2, T}` for every test
/// function, with `u_0` taken from the pair at time zero.
pub fn weak_form_residual(pair: &AdmissiblePair, catalog: &[TestFunction]) -> WeakFormReport {
    let g = pair.grid();
    let n = g.dim();
    let ns = g.n_space();
    let ws = g.space_weights();
    let dt = g.dt();
    let positions: Vec<Vec<f64>> = (0..ns).map(|s| g.position(s)).collect();
    let levels: Vec<usize> = [4usize, 2, 1].iter().map(|d| ((g.nt as f64 / *d as f64).round() as usize).max(1)).collect();

    // sigma(Du) once per node
    let mut sig = vec![vec![0.0; n]; ns * g.n_levels()];
    for k in 0..g.n_levels() {
        for s in 0..ns {
            sigma_into(&pair.du.at(k, s), &mut sig[k * ns + s]);
        }
    }

    let mut entries = Vec::new();
    let mut max_abs: f64 = 0.0;
    let mut div_id: f64 = 0.0;
    let mut max_grad: f64 = 0.0;
    for f in catalog {
        // per-level spatial integrals of -u zeta_t + sigma . Dzeta and u zeta
        let mut flux_int = vec![0.0; g.n_levels()];
        let mut mass = vec![0.0; g.n_levels()];
        let mut ident = vec![0.0; g.n_levels()];
        for k in 0..g.n_levels() {
            let t = g.time(k);
            let mut a = vec![0.0; ns];
            let mut b = vec![0.0; ns];
            let mut c = vec![0.0; ns];
            for s in 0..ns {
                let j = f.jet(&positions[s], t);
                let u = pair.u.at(k, s);
                let v = pair.v.at(k, s);
                let dot: f64 = (0..n).map(|i| sig[k * ns + s][i] * j.grad[i]).sum();
                let vdot: f64 = (0..n).map(|i| v[i] * j.grad[i]).sum();
                a[s] = -u * j.dt + dot;
                b[s] = u * j.value;
                c[s] = vdot + u * j.value;
                max_grad = max_grad.max(j.grad.iter().map(|x| x * x).sum::<f64>().sqrt());
            }
            flux_int[k] = space_integral(&ws, &a);
            mass[k] = space_integral(&ws, &b);
            ident[k] = space_integral(&ws, &c);
        }
        for &ks in &levels {
            let time_int: f64 = (1..=ks).map(|k| 0.5 * dt * (flux_int[k - 1] + flux_int[k])).sum();
            let w = mass[ks] - mass[0] + time_int;
            max_abs = max_abs.max(w.abs());
            div_id = div_id.max(ident[ks].abs());
            entries.push(WeakEntry {
                function: f.name(),
                s: g.time(ks),
                value: w,
            });
        }
    }
    let residual = pair.residual();
    let bound = residual * max_grad + 1e-4;
    WeakFormReport {
        entries,
        max_abs,
        divergence_identity: div_id,
        max_grad_zeta: max_grad,
        residual,
        bound,
        within_bound: max_abs <= bound,
    }
}

/// A pair with `v_t = sigma(Du)` at every node: the regularized solver run
/// with the unmodified flux from a small datum with `|Du_0| < 1`.
pub fn exact_inclusion_datum(u0: &[f64], grid: &GridSpec) -> Result<BoundaryDatum> {
    let weights = grid.space_weights();
    let mean = space_integral(&weights, u0) / grid.domain.volume();
    let u = solve_regularized(u0, &PeronaMalik, grid)?;
    let m = crate::parabolic::max_gradient(grid, u.slice(0)).max(1e-3);
    let profile = build_profile(m, 0.5, grid.dim())?;
    assemble_datum(u, &PeronaMalik, &profile, mean)
}
