//! Node classification and the dyadic cube cover of the good set.
//!
//! Cubes live in node-index space over the axes `(x_1, ..., x_n, t)`.
//! Neighbouring cubes share their faces; only interior nodes of a cube are
//! ever modified, so faces keep the values of the pair they came from.

use serde::{Deserialize, Serialize};

use super::pair::AdmissiblePair;
use crate::domain::BoxDomain;
use crate::field::GridSpec;
use crate::hull::{s_delta_expr, ReducedPoint};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cube {
    /// Inclusive node bounds per axis, time last.
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
}

impl Cube {
    pub fn axes(&self) -> usize {
        self.lo.len()
    }

    /// True when every axis has at least one interior node.
    pub fn has_interior(&self) -> bool {
        self.lo.iter().zip(&self.hi).all(|(a, b)| b >= &(a + 2))
    }

    pub fn can_split(&self) -> bool {
        self.lo.iter().zip(&self.hi).any(|(a, b)| b - a >= 4)
    }

    /// Halves every axis that is at least four intervals long.
    pub fn split(&self) -> Vec<Cube> {
        let mut out = vec![self.clone()];
        for ax in 0..self.axes() {
            let (a, b) = (self.lo[ax], self.hi[ax]);
            if b - a < 4 {
                continue;
            }
            let mid = a + (b - a) / 2;
            let mut next = Vec::with_capacity(out.len() * 2);
            for c in out {
                let mut left = c.clone();
                left.hi[ax] = mid;
                let mut right = c;
                right.lo[ax] = mid;
                next.push(left);
                next.push(right);
            }
            out = next;
        }
        out
    }

    pub fn center(&self) -> Vec<usize> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| (a + b) / 2).collect()
    }

    /// Interior node indices as `(time level, flat spatial index)`.
    pub fn interior_nodes(&self, grid: &GridSpec) -> Vec<(usize, usize)> {
        self.nodes(grid, true)
    }

    /// All node indices of the closed cube.
    pub fn all_nodes(&self, grid: &GridSpec) -> Vec<(usize, usize)> {
        self.nodes(grid, false)
    }

    fn nodes(&self, grid: &GridSpec, interior: bool) -> Vec<(usize, usize)> {
        let d = self.axes();
        let n = d - 1;
        let off = if interior { 1 } else { 0 };
        let ranges: Vec<(usize, usize)> = (0..d).map(|a| (self.lo[a] + off, self.hi[a] - off)).collect();
        if ranges.iter().any(|(a, b)| a > b) {
            return Vec::new();
        }
        let counts: Vec<usize> = ranges.iter().map(|(a, b)| b - a + 1).collect();
        let total: usize = counts.iter().product();
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; d];
        for mut m in 0..total {
            for a in 0..d {
                idx[a] = ranges[a].0 + m % counts[a];
                m /= counts[a];
            }
            out.push((idx[n], grid.flat(&idx[..n])));
        }
        out
    }

    /// Physical space-time box of the cube.
    pub fn region(&self, grid: &GridSpec) -> BoxDomain {
        let n = self.axes() - 1;
        BoxDomain {
            intervals: (0..n).map(|a| (grid.coord(a, self.lo[a]), grid.coord(a, self.hi[a]))).collect(),
            time: Some((grid.time(self.lo[n]), grid.time(self.hi[n]))),
        }
    }

    pub fn diameter(&self, grid: &GridSpec) -> f64 {
        let r = self.region(grid);
        let mut s: f64 = (0..r.dim()).map(|a| r.length(a).powi(2)).sum();
        s += r.duration().powi(2);
        s.sqrt()
    }
}

/// Distance from `point` to the boundary of `S_delta` along the gradient
/// of the defining expression, found by bisection and capped at `cap`.
pub fn boundary_distance(point: &ReducedPoint, delta: f64, cap: f64) -> f64 {
    let e0 = s_delta_expr(point, delta);
    if e0 >= 0.0 {
        return 0.0;
    }
    let n = point.dim();
    let h = 1e-7;
    let mut grad = vec![0.0; 2 * n];
    for (k, g) in grad.iter_mut().enumerate() {
        let mut a = point.clone();
        let mut b = point.clone();
        if k < n {
            a.p[k] += h;
            b.p[k] -= h;
        } else {
            a.beta[k - n] += h;
            b.beta[k - n] -= h;
        }
        *g = (s_delta_expr(&a, delta) - s_delta_expr(&b, delta)) / (2.0 * h);
    }
    let gn = grad.iter().map(|x| x * x).sum::<f64>().sqrt();
    if gn == 0.0 {
        return cap;
    }
    let at = |s: f64| {
        let q = ReducedPoint::new(
            (0..n).map(|i| point.p[i] + s * grad[i] / gn).collect(),
            (0..n).map(|i| point.beta[i] + s * grad[n + i] / gn).collect(),
        );
        s_delta_expr(&q, delta)
    };
    if at(cap) < 0.0 {
        return cap;
    }
    let (mut lo, mut hi) = (0.0, cap);
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if at(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Per-node quantities used to pick `tau` and the good set.
#[derive(Debug, Clone)]
pub struct NodeScan {
    /// Node residual, time-major.
    pub residual: Vec<f64>,
    /// Distance to the boundary of `S_delta`; zero outside it.
    pub margin: Vec<f64>,
    /// Space-time trapezoid weight divided by `|Omega_T|`.
    pub weight: Vec<f64>,
    pub interior: Vec<bool>,
}

pub fn scan_nodes(pair: &AdmissiblePair) -> NodeScan {
    let g = pair.grid();
    let ns = g.n_space();
    let ws = g.space_weights();
    let wt = g.time_weights();
    let vol = g.spacetime_volume();
    let total = ns * g.n_levels();
    let mut scan = NodeScan {
        residual: vec![0.0; total],
        margin: vec![0.0; total],
        weight: vec![0.0; total],
        interior: vec![false; total],
    };
    for k in 0..g.n_levels() {
        for s in 0..ns {
            let i = k * ns + s;
            scan.residual[i] = pair.node_residual(k, s);
            scan.weight[i] = wt[k] * ws[s] / vol;
            scan.interior[i] = pair.is_interior(k, s);
            if scan.interior[i] {
                scan.margin[i] = boundary_distance(&pair.point(k, s), pair.delta, 1.0);
            }
        }
    }
    scan
}

impl NodeScan {
    pub fn is_good(&self, i: usize, tau: f64) -> bool {
        self.interior[i] && self.margin[i] > tau && self.residual[i] > tau
    }

    /// Residual integral over interior nodes outside the good set.
    pub fn residual_set_integral(&self, tau: f64) -> f64 {
        (0..self.residual.len())
            .filter(|&i| self.interior[i] && !self.is_good(i, tau))
            .map(|i| self.weight[i] * self.residual[i])
            .sum()
    }

    pub fn good_integral(&self, tau: f64) -> f64 {
        (0..self.residual.len())
            .filter(|&i| self.is_good(i, tau))
            .map(|i| self.weight[i] * self.residual[i])
            .sum()
    }
}

/// Layout of the dyadic tiling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverOptions {
    /// Top-level block length in intervals per axis.
    pub block: usize,
    /// Offset of the tiling per axis, time last.
    pub offset: Vec<usize>,
    /// Largest allowed deviation of `(u, Du, v, v_t)` from the cube center.
    pub oscillation_budget: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CubeCover {
    pub tau: f64,
    pub cubes: Vec<Cube>,
    pub good_nodes: usize,
    pub good_integral: f64,
    pub residual_set_integral: f64,
}

/// Largest deviation over the cube interior of `|u| + |Du| + |v| + |v_t|`
/// differences from the center node.
pub fn cube_oscillation(pair: &AdmissiblePair, cube: &Cube) -> f64 {
    let g = pair.grid();
    let n = g.dim();
    let c = cube.center();
    let (kc, sc) = (c[n], g.flat(&c[..n]));
    let uc = pair.u.at(kc, sc);
    let duc = pair.du.at(kc, sc);
    let vc = pair.v.at(kc, sc);
    let vtc = pair.vt.at(kc, sc);
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    cube.interior_nodes(g)
        .into_iter()
        .map(|(k, s)| {
            (pair.u.at(k, s) - uc).abs()
                + dist(&pair.du.at(k, s), &duc)
                + dist(&pair.v.at(k, s), &vc)
                + dist(&pair.vt.at(k, s), &vtc)
        })
        .fold(0.0, f64::max)
}

fn tile_axis(len: usize, block: usize, offset: usize) -> Vec<(usize, usize)> {
    let mut cuts = vec![0];
    let mut c = offset % block;
    if c == 0 {
        c = block;
    }
    while c < len {
        cuts.push(c);
        c += block;
    }
    cuts.push(len);
    cuts.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Top-level blocks of the tiling.
pub fn tile(grid: &GridSpec, opts: &CoverOptions) -> Vec<Cube> {
    let n = grid.dim();
    let lens: Vec<usize> = (0..n).map(|_| grid.nx - 1).chain(std::iter::once(grid.nt)).collect();
    let per_axis: Vec<Vec<(usize, usize)>> = (0..=n)
        .map(|a| tile_axis(lens[a], opts.block.max(2), opts.offset.get(a).copied().unwrap_or(0)))
        .collect();
    let mut cubes = vec![Cube { lo: vec![], hi: vec![] }];
    for axis in per_axis {
        let mut next = Vec::with_capacity(cubes.len() * axis.len());
        for c in &cubes {
            for &(a, b) in &axis {
                let mut d = c.clone();
                d.lo.push(a);
                d.hi.push(b);
                next.push(d);
            }
        }
        cubes = next;
    }
    cubes
}

/// Maximal dyadic cubes whose interior nodes are all good and whose
/// oscillation stays under the budget.
pub fn classify_cells(pair: &AdmissiblePair, scan: &NodeScan, tau: f64, opts: &CoverOptions) -> CubeCover {
    let g = pair.grid();
    let ns = g.n_space();
    let mut cubes = Vec::new();
    let mut stack = tile(g, opts);
    while let Some(c) = stack.pop() {
        if !c.has_interior() {
            continue;
        }
        let nodes = c.interior_nodes(g);
        let all_good = nodes.iter().all(|&(k, s)| scan.is_good(k * ns + s, tau));
        if all_good && cube_oscillation(pair, &c) < opts.oscillation_budget {
            cubes.push(c);
        } else if c.can_split() {
            stack.extend(c.split());
        } else if nodes.len() > 1 {
            // smallest blocks: fall back to single-node cubes where possible
            continue;
        }
    }
    cubes.sort();
    let good_nodes = (0..scan.residual.len()).filter(|&i| scan.is_good(i, tau)).count();
    CubeCover {
        tau,
        cubes,
        good_nodes,
        good_integral: scan.good_integral(tau),
        residual_set_integral: scan.residual_set_integral(tau),
    }
}
