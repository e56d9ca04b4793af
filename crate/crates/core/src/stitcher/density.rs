//! One density step and the driver that chains them.

use std::sync::Arc;

use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cover::{classify_cells, scan_nodes, CoverOptions, Cube, NodeScan};
use super::pair::{AdmissiblePair, AppliedPatch, PairDiagnostics};
use crate::convint::{build_patch, Patch, PatchOptions};
use crate::divinv::{measure_inverse_constant, right_inverse_spacetime};
use crate::domain::BoxDomain;
use crate::flux::sigma_into;
use crate::hull::s_delta_expr;
use crate::parabolic::BoundaryDatum;
use crate::{Error, Result};

/// Knobs of a density step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepOptions {
    /// Top-level cube length in grid intervals.
    pub block: usize,
    /// Measured constant of the divergence inverse on the unit box.
    pub inverse_constant: f64,
    pub patch: PatchOptions,
}

impl StepOptions {
    /// Coarse patch sampling suited to cubes a few grid cells wide.
    pub fn new(inverse_constant: f64) -> Self {
        Self {
            block: 8,
            inverse_constant,
            patch: PatchOptions {
                samples_per_axis: 4,
                perturbations: 8,
                perturbation_samples_per_axis: 4,
                max_retries: 4,
                ..PatchOptions::default()
            },
        }
    }

    /// Measures the inverse constant on the unit box of dimension `dim`.
    pub fn measured(dim: usize, seed: u64) -> Result<Self> {
        let c = measure_inverse_constant(&BoxDomain::unit(dim), 20, seed, 32)?;
        Ok(Self::new(c))
    }
}

/// The three parts of the residual after a step, each divided by `|Omega_T|`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpsSplit {
    /// Residual over interior nodes outside the good set.
    pub i1: f64,
    /// Residual over good nodes left unpatched.
    pub i2: f64,
    /// Residual over patched nodes after the step.
    pub i3: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepReport {
    pub step: usize,
    pub eps: f64,
    pub eta: f64,
    pub noop: bool,
    pub tau: f64,
    pub rho_cap: f64,
    pub inverse_constant: f64,
    pub cubes_considered: usize,
    pub patches_applied: usize,
    pub cubes_skipped: usize,
    pub residual_before: f64,
    pub residual_after: f64,
    pub sup_increment: f64,
    pub mean_warnings: usize,
    pub split: EpsSplit,
    pub diagnostics: PairDiagnostics,
}

struct Ctx<'a> {
    pair: &'a AdmissiblePair,
    scan: &'a NodeScan,
    eps: f64,
    tau: f64,
    rho_cap: f64,
    frame_constant: f64,
    opts: PatchOptions,
    seed: u64,
    ws: Vec<f64>,
    wt: Vec<f64>,
}

struct NodeUpdate {
    k: usize,
    s: usize,
    phi: f64,
    phi_t: f64,
    dphi: Vec<f64>,
    dv: Vec<f64>,
    dvt: Vec<f64>,
}

struct CubeUpdate {
    cube: Cube,
    patch: Patch,
    nodes: Vec<NodeUpdate>,
    mean_warning: bool,
}

fn cube_seed(seed: u64, cube: &Cube) -> u64 {
    cube.lo
        .iter()
        .chain(&cube.hi)
        .fold(seed ^ 0x9e37_79b9_7f4a_7c15, |h, &x| (h ^ x as u64).wrapping_mul(0x100_0000_01b3))
}

fn try_cube(ctx: &Ctx, cube: &Cube) -> Option<CubeUpdate> {
    let pair = ctx.pair;
    let g = pair.grid();
    let n = g.dim();
    let c = cube.center();
    let target = pair.point(c[n], g.flat(&c[..n]));
    if s_delta_expr(&target, pair.delta) > -1e-6 {
        return None;
    }
    let region = cube.region(g);
    let mut opts = ctx.opts.clone();
    opts.seed = cube_seed(ctx.seed, cube);
    let ambient = g.spacetime_volume();
    let budget = ctx.eps / 3.0;
    let mut rho = ctx.rho_cap;
    let mut patch = build_patch(&target, pair.delta, &region, rho, budget, ambient, &opts).ok()?;
    let r0 = patch.certificates.as_ref()?.stability_radius;
    if r0 < 2.0 * ctx.frame_constant * rho {
        rho = 0.999 * r0 / (2.0 * ctx.frame_constant);
        patch = build_patch(&target, pair.delta, &region, rho, budget, ambient, &opts).ok()?;
    }

    // samples at the closed cube, time axis first
    let shape: Vec<usize> = std::iter::once(cube.hi[n] - cube.lo[n] + 1)
        .chain((0..n).map(|a| cube.hi[a] - cube.lo[a] + 1))
        .collect();
    let mut phi = ArrayD::<f64>::zeros(IxDyn(&shape));
    let mut phi_t = ArrayD::<f64>::zeros(IxDyn(&shape));
    let mut samples = Vec::new();
    let total: usize = shape.iter().product();
    let mut local = vec![0usize; n + 1];
    for mut m in 0..total {
        for (a, l) in local.iter_mut().enumerate().rev() {
            *l = m % shape[a];
            m /= shape[a];
        }
        let k = cube.lo[n] + local[0];
        let idx: Vec<usize> = (0..n).map(|a| cube.lo[a] + local[a + 1]).collect();
        let x: Vec<f64> = (0..n).map(|a| g.coord(a, idx[a])).collect();
        let w = patch.eval(&x, g.time(k));
        phi[IxDyn(&local)] = w.phi;
        phi_t[IxDyn(&local)] = w.phi_t;
        samples.push((local.clone(), k, g.flat(&idx), w));
    }
    let space = BoxDomain {
        intervals: region.intervals.clone(),
        time: None,
    };
    let corr = right_inverse_spacetime(&phi, &space).ok()?;
    let corr_t = right_inverse_spacetime(&phi_t, &space).ok()?;

    let (ws, wt) = (&ctx.ws, &ctx.wt);
    let mut before = 0.0;
    let mut after = 0.0;
    let mut nodes = Vec::new();
    let mut sig = vec![0.0; n];
    for (local, k, s, w) in samples {
        let inside = (0..=n).all(|a| local[a] > 0 && local[a] + 1 < shape[a]);
        if !inside {
            continue;
        }
        let dv: Vec<f64> = (0..n).map(|a| w.psi[a] + corr.components[a][IxDyn(&local)]).collect();
        let dvt: Vec<f64> = (0..n).map(|a| w.psi_t[a] + corr_t.components[a][IxDyn(&local)]).collect();
        let p: Vec<f64> = pair.du.at(k, s).iter().zip(&w.dphi).map(|(a, b)| a + b).collect();
        let beta: Vec<f64> = pair.vt.at(k, s).iter().zip(&dvt).map(|(a, b)| a + b).collect();
        let point = crate::hull::ReducedPoint::new(p, beta);
        if s_delta_expr(&point, pair.delta) >= 0.0 {
            return None;
        }
        sigma_into(&point.p, &mut sig);
        let r: f64 = point.beta.iter().zip(&sig).map(|(b, x)| (b - x).powi(2)).sum::<f64>().sqrt();
        let weight = wt[k] * ws[s];
        before += weight * pair.node_residual(k, s);
        after += weight * r;
        nodes.push(NodeUpdate {
            k,
            s,
            phi: w.phi,
            phi_t: w.phi_t,
            dphi: w.dphi,
            dv,
            dvt,
        });
    }
    if nodes.is_empty() || after >= before {
        return None;
    }
    Some(CubeUpdate {
        cube: cube.clone(),
        patch,
        nodes,
        mean_warning: corr.mean_warning || corr_t.mean_warning,
    })
}

/// Tries the cube, then its dyadic children; returns updates and the
/// number of cubes given up on.
fn process_cube(ctx: &Ctx, cube: &Cube) -> (Vec<CubeUpdate>, usize) {
    if let Some(u) = try_cube(ctx, cube) {
        return (vec![u], 0);
    }
    if !cube.can_split() {
        return (Vec::new(), 1);
    }
    let ns = ctx.pair.grid().n_space();
    let mut out = Vec::new();
    let mut skipped = 0;
    for child in cube.split() {
        if !child.has_interior() {
            continue;
        }
        let good = child
            .interior_nodes(ctx.pair.grid())
            .iter()
            .all(|&(k, s)| ctx.scan.is_good(k * ns + s, ctx.tau));
        if !good {
            skipped += 1;
            continue;
        }
        let (u, sk) = process_cube(ctx, &child);
        out.extend(u);
        skipped += sk;
    }
    (out, skipped)
}

/// Largest dyadic `tau` whose residual set stays within `limit`.
fn choose_tau(scan: &NodeScan, limit: f64) -> f64 {
    let mut tau = 0.5;
    for _ in 0..52 {
        if scan.residual_set_integral(tau) <= limit {
            return tau;
        }
        tau *= 0.5;
    }
    tau
}

/// One density step at level `eps` with sup-norm budget `eta`.
///
/// Every certifiable good cube is patched; the step fails with
/// [`Error::BudgetInfeasible`] when the residual stays above `eps`.
pub fn density_step(
    pair: &AdmissiblePair,
    eps: f64,
    eta: f64,
    step: usize,
    seed: u64,
    options: &StepOptions,
) -> Result<(AdmissiblePair, StepReport)> {
    if !(eps > 0.0 && eta > 0.0) {
        return Err(Error::Domain("eps and eta must be positive".into()));
    }
    let g = pair.grid().clone();
    let n = g.dim();
    let residual_before = pair.residual();
    let mut report = StepReport {
        step,
        eps,
        eta,
        noop: true,
        tau: 0.0,
        rho_cap: 0.0,
        inverse_constant: options.inverse_constant,
        cubes_considered: 0,
        patches_applied: 0,
        cubes_skipped: 0,
        residual_before,
        residual_after: residual_before,
        sup_increment: 0.0,
        mean_warnings: 0,
        split: EpsSplit {
            i1: 0.0,
            i2: residual_before,
            i3: 0.0,
            passed: residual_before <= eps,
        },
        diagnostics: pair.diagnostics(),
    };
    if eps >= 1.0 {
        return Ok((pair.clone(), report));
    }

    let scan = scan_nodes(pair);
    let tau = choose_tau(&scan, (eps / (3.0 * 2f64.powi(step as i32))).min(0.25 * residual_before));
    let tau0 = pair.mu - pair.ut.sup();
    let frame_constant = options.inverse_constant * g.domain.side_sum();
    let rho_cap = 0.999 * (0.5 * tau0).min(eps / (12.0 * frame_constant)).min(eta);
    report.tau = tau;
    report.rho_cap = rho_cap;

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (step as u64).wrapping_mul(0xa24b_aed4_963e_e407));
    let offset: Vec<usize> = (0..=n).map(|_| 2 * rng.gen_range(0..options.block / 2) + step % 2).collect();
    let mut patch_opts = options.patch.clone();
    patch_opts.phase = rng.gen_range(0.05..0.95);
    let mut ramp: Vec<f64> = (0..n).map(|a| 0.5 * g.h(a)).collect();
    ramp.push(0.5 * g.dt());
    patch_opts.ramp_width = Some(ramp);
    let cover = classify_cells(
        pair,
        &scan,
        tau,
        &CoverOptions {
            block: options.block,
            offset,
            oscillation_budget: eps / 12.0,
        },
    );
    report.cubes_considered = cover.cubes.len();

    let ctx = Ctx {
        pair,
        scan: &scan,
        eps,
        tau,
        rho_cap,
        frame_constant,
        opts: patch_opts,
        seed: seed ^ (step as u64) << 32,
        ws: g.space_weights(),
        wt: g.time_weights(),
    };
    let results: Vec<(Vec<CubeUpdate>, usize)> = cover.cubes.par_iter().map(|c| process_cube(&ctx, c)).collect();
    let mut updates = Vec::new();
    for (u, sk) in results {
        updates.extend(u);
        report.cubes_skipped += sk;
    }
    updates.sort_by(|a, b| a.cube.cmp(&b.cube));

    let ns = g.n_space();
    let mut next = pair.clone();
    let mut patched = vec![false; ns * g.n_levels()];
    let mut sup_inc: f64 = 0.0;
    for up in &updates {
        for nu in &up.nodes {
            let i = nu.k * ns + nu.s;
            patched[i] = true;
            next.u.values[i] += nu.phi;
            next.ut.values[i] += nu.phi_t;
            for a in 0..n {
                next.du.components[a][i] += nu.dphi[a];
                next.v.components[a][i] += nu.dv[a];
                next.vt.components[a][i] += nu.dvt[a];
            }
            sup_inc = sup_inc.max(nu.phi.abs());
        }
        if up.mean_warning {
            report.mean_warnings += 1;
        }
    }
    next.patches.extend(updates.into_iter().map(|u| AppliedPatch {
        step,
        cube: u.cube,
        patch: u.patch,
    }));

    let vol = g.spacetime_volume();
    let ws = g.space_weights();
    let wt = g.time_weights();
    let mut i2 = 0.0;
    let mut i3 = 0.0;
    for k in 0..g.n_levels() {
        for s in 0..ns {
            let i = k * ns + s;
            if patched[i] {
                i3 += wt[k] * ws[s] * next.node_residual(k, s) / vol;
            } else if scan.is_good(i, tau) {
                i2 += wt[k] * ws[s] * scan.residual[i] / vol;
            }
        }
    }
    let i1 = scan.residual_set_integral(tau);
    report.patches_applied = next.patches.len() - pair.patches.len();
    report.noop = report.patches_applied == 0;
    report.residual_after = next.residual();
    report.sup_increment = sup_inc;
    report.split = EpsSplit {
        i1,
        i2,
        i3,
        passed: i1 + i2 <= 2.0 * eps / 3.0 && i3 <= eps / 3.0,
    };
    report.diagnostics = next.diagnostics();

    if report.residual_after > eps {
        return Err(Error::BudgetInfeasible(format!(
            "residual {:.4e} above eps {eps} after step {step}; refine the grid",
            report.residual_after
        )));
    }
    if sup_inc >= eta {
        return Err(Error::certificate(
            "sup-increment",
            format!("{sup_inc:e} not below eta {eta}"),
        ));
    }
    Ok((next, report))
}

/// Output of a chained run.
#[derive(Debug, Clone)]
pub struct IterationRun {
    /// The datum pair followed by one pair per completed step.
    pub pairs: Vec<AdmissiblePair>,
    pub reports: Vec<StepReport>,
    pub finest_eps: Option<f64>,
    pub stopped_early: Option<String>,
}

/// Chains density steps over `schedule`, stopping at the first step the
/// grid cannot resolve.
pub fn iterate(
    datum: Arc<BoundaryDatum>,
    schedule: &[(f64, f64)],
    seed: u64,
    options: &StepOptions,
) -> Result<IterationRun> {
    if schedule.windows(2).any(|w| w[1].0 > w[0].0) {
        return Err(Error::Domain("schedule eps must be non-increasing".into()));
    }
    let mut run = IterationRun {
        pairs: vec![AdmissiblePair::from_datum(datum)],
        reports: Vec::new(),
        finest_eps: None,
        stopped_early: None,
    };
    for (j, &(eps, eta)) in schedule.iter().enumerate() {
        let current = run.pairs.last().expect("datum pair");
        match density_step(current, eps, eta, j + 1, seed, options) {
            Ok((next, report)) => {
                run.pairs.push(next);
                run.reports.push(report);
                run.finest_eps = Some(eps);
            }
            Err(e @ Error::BudgetInfeasible(_)) => {
                run.stopped_early = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(run)
}
