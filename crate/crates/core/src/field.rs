//! Uniform node grids on `Omega x [0, T]` and fields sampled on them.
//!
//! Spatial nodes include the boundary. Stored values are time-major:
//! `values[k * n_space + s]`, with the flat spatial index `s` running
//! fastest along axis 0.

use serde::{Deserialize, Serialize};

use crate::domain::BoxDomain;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub domain: BoxDomain,
    pub t_final: f64,
    pub nx: usize,
    /// Number of stored time steps; there are `nt + 1` stored levels.
    pub nt: usize,
    /// Explicit sub-steps taken between stored levels.
    pub substeps: usize,
}

const STABILITY_SAFETY: f64 = 0.9;

impl GridSpec {
    /// Validates the explicit stability bound `dt <= h^2 / (2 n Theta)` on the inner step.
    pub fn new(
        domain: BoxDomain,
        t_final: f64,
        nx: usize,
        nt: usize,
        substeps: usize,
        upper_ellipticity: f64,
    ) -> Result<Self> {
        if nx < 3 || nt < 1 || substeps < 1 {
            return Err(Error::Domain(format!(
                "grid needs nx >= 3, nt >= 1, substeps >= 1 (got {nx}, {nt}, {substeps})"
            )));
        }
        if !(t_final > 0.0) {
            return Err(Error::Domain(format!("final time {t_final} must be positive")));
        }
        let domain = BoxDomain {
            intervals: domain.intervals,
            time: Some((0.0, t_final)),
        };
        let grid = Self {
            domain,
            t_final,
            nx,
            nt,
            substeps,
        };
        let limit = grid.stable_step(upper_ellipticity);
        if grid.inner_dt() > limit {
            return Err(Error::Stability(format!(
                "inner step {:e} exceeds the explicit limit {:e}",
                grid.inner_dt(),
                limit
            )));
        }
        Ok(grid)
    }

    /// Chooses the smallest sub-step count that keeps the inner step stable.
    pub fn with_auto_substeps(
        domain: BoxDomain,
        t_final: f64,
        nx: usize,
        nt: usize,
        upper_ellipticity: f64,
    ) -> Result<Self> {
        let probe = Self::new(domain.clone(), t_final, nx, nt, usize::MAX / 4, upper_ellipticity)?;
        let limit = STABILITY_SAFETY * probe.stable_step(upper_ellipticity);
        let substeps = (probe.dt() / limit).ceil().max(1.0) as usize;
        Self::new(domain, t_final, nx, nt, substeps, upper_ellipticity)
    }

    pub fn stable_step(&self, upper_ellipticity: f64) -> f64 {
        let hmin = (0..self.dim()).map(|a| self.h(a)).fold(f64::INFINITY, f64::min);
        hmin * hmin / (2.0 * self.dim() as f64 * upper_ellipticity)
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn h(&self, axis: usize) -> f64 {
        self.domain.length(axis) / (self.nx - 1) as f64
    }

    pub fn h_max(&self) -> f64 {
        (0..self.dim()).map(|a| self.h(a)).fold(0.0, f64::max)
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.nt as f64
    }

    pub fn inner_dt(&self) -> f64 {
        self.dt() / self.substeps as f64
    }

    pub fn n_space(&self) -> usize {
        self.nx.pow(self.dim() as u32)
    }

    pub fn n_levels(&self) -> usize {
        self.nt + 1
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t_final * k as f64 / self.nt as f64
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        let (a, _) = self.domain.intervals[axis];
        a + self.h(axis) * i as f64
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.nx.pow(axis as u32)
    }

    pub fn multi_index(&self, mut s: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.dim());
        for _ in 0..self.dim() {
            out.push(s % self.nx);
            s /= self.nx;
        }
        out
    }

    pub fn flat(&self, idx: &[usize]) -> usize {
        idx.iter().rev().fold(0, |acc, &i| acc * self.nx + i)
    }

    pub fn position(&self, s: usize) -> Vec<f64> {
        self.multi_index(s)
            .iter()
            .enumerate()
            .map(|(a, &i)| self.coord(a, i))
            .collect()
    }

    pub fn on_boundary(&self, s: usize) -> bool {
        self.multi_index(s).iter().any(|&i| i == 0 || i == self.nx - 1)
    }

    /// Trapezoid weights of the spatial nodes.
    pub fn space_weights(&self) -> Vec<f64> {
        let per_axis: Vec<Vec<f64>> = (0..self.dim())
            .map(|a| crate::quad::trapezoid_weights(self.nx, self.h(a)))
            .collect();
        (0..self.n_space())
            .map(|s| {
                self.multi_index(s)
                    .iter()
                    .enumerate()
                    .map(|(a, &i)| per_axis[a][i])
                    .product()
            })
            .collect()
    }

    pub fn time_weights(&self) -> Vec<f64> {
        crate::quad::trapezoid_weights(self.n_levels(), self.dt())
    }

    pub fn spacetime_volume(&self) -> f64 {
        self.domain.volume() * self.t_final
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &GridSpec) -> Self {
        Self {
            values: vec![0.0; grid.n_space() * grid.n_levels()],
            grid: grid.clone(),
        }
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        let n = self.grid.n_space();
        &self.values[k * n..(k + 1) * n]
    }

    pub fn slice_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.grid.n_space();
        &mut self.values[k * n..(k + 1) * n]
    }

    pub fn at(&self, k: usize, s: usize) -> f64 {
        self.values[k * self.grid.n_space() + s]
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorField {
    pub grid: GridSpec,
    pub components: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn zeros(grid: &GridSpec) -> Self {
        let len = grid.n_space() * grid.n_levels();
        Self {
            components: vec![vec![0.0; len]; grid.dim()],
            grid: grid.clone(),
        }
    }

    pub fn at(&self, k: usize, s: usize) -> Vec<f64> {
        let i = k * self.grid.n_space() + s;
        self.components.iter().map(|c| c[i]).collect()
    }

    pub fn component_slice(&self, comp: usize, k: usize) -> &[f64] {
        let n = self.grid.n_space();
        &self.components[comp][k * n..(k + 1) * n]
    }

    /// Largest Euclidean norm over all nodes.
    pub fn sup_norm(&self) -> f64 {
        let len = self.components[0].len();
        (0..len)
            .map(|i| self.components.iter().map(|c| c[i] * c[i]).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

/// How gradients are taken at boundary nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryStencil {
    /// Even reflection across the boundary; the normal derivative vanishes.
    Reflect,
    /// First-order one-sided differences.
    OneSided,
}

/// Node gradient of one spatial slice: central differences inside.
pub fn node_gradient(grid: &GridSpec, slice: &[f64], boundary: BoundaryStencil) -> Vec<Vec<f64>> {
    let n = grid.dim();
    let nx = grid.nx;
    let mut out = vec![vec![0.0; slice.len()]; n];
    for (a, comp) in out.iter_mut().enumerate() {
        let stride = grid.stride(a);
        let h = grid.h(a);
        for (s, o) in comp.iter_mut().enumerate() {
            let i = (s / stride) % nx;
            *o = if i == 0 {
                match boundary {
                    BoundaryStencil::Reflect => 0.0,
                    BoundaryStencil::OneSided => (slice[s + stride] - slice[s]) / h,
                }
            } else if i == nx - 1 {
                match boundary {
                    BoundaryStencil::Reflect => 0.0,
                    BoundaryStencil::OneSided => (slice[s] - slice[s - stride]) / h,
                }
            } else {
                (slice[s + stride] - slice[s - stride]) / (2.0 * h)
            };
        }
    }
    out
}

/// Divergence of a vector slice: central inside, one-sided on the boundary.
pub fn node_divergence(grid: &GridSpec, comps: &[&[f64]]) -> Vec<f64> {
    let nx = grid.nx;
    let mut out = vec![0.0; comps[0].len()];
    for (a, c) in comps.iter().enumerate() {
        let stride = grid.stride(a);
        let h = grid.h(a);
        for (s, o) in out.iter_mut().enumerate() {
            let i = (s / stride) % nx;
            *o += if i == 0 {
                (c[s + stride] - c[s]) / h
            } else if i == nx - 1 {
                (c[s] - c[s - stride]) / h
            } else {
                (c[s + stride] - c[s - stride]) / (2.0 * h)
            };
        }
    }
    out
}

/// Trapezoid integral of a spatial slice.
pub fn space_integral(weights: &[f64], slice: &[f64]) -> f64 {
    weights.iter().zip(slice).map(|(w, x)| w * x).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_round_trips() {
        let g = GridSpec::new(BoxDomain::unit(2), 0.01, 5, 2, 100, 1.0).unwrap();
        for s in 0..g.n_space() {
            assert_eq!(g.flat(&g.multi_index(s)), s);
        }
        assert_eq!(g.position(7), vec![0.5, 0.25]);
    }

    #[test]
    fn unstable_step_is_rejected() {
        let r = GridSpec::new(BoxDomain::unit(1), 1.0, 65, 10, 1, 1.0);
        assert!(matches!(r, Err(Error::Stability(_))));
        let g = GridSpec::with_auto_substeps(BoxDomain::unit(1), 1.0, 65, 10, 1.0).unwrap();
        assert!(g.inner_dt() <= g.stable_step(1.0));
    }

    #[test]
    fn weights_sum_to_volume() {
        let g = GridSpec::new(BoxDomain::new(vec![(0.0, 2.0), (0.0, 0.5)]).unwrap(), 1.0, 9, 4, 4000, 1.0).unwrap();
        let w: f64 = g.space_weights().iter().sum();
        assert!((w - 1.0).abs() < 1e-14);
    }
}
