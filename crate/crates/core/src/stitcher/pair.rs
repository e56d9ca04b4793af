use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::cover::Cube;
use crate::convint::Patch;
use crate::field::{node_divergence, GridSpec, ScalarField, VectorField};
use crate::flux::sigma_into;
use crate::hull::{classify, Membership, ReducedPoint};
use crate::parabolic::BoundaryDatum;

/// A patch together with the cube it lives on and the step that applied it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AppliedPatch {
    pub step: usize,
    pub cube: Cube,
    pub patch: Patch,
}

/// A pair `(u, v)` with `div v = u`, stored at nodes together with the
/// derivatives the residual needs.
#[derive(Debug, Clone)]
pub struct AdmissiblePair {
    pub datum: Arc<BoundaryDatum>,
    pub u: ScalarField,
    pub v: VectorField,
    pub du: VectorField,
    pub ut: ScalarField,
    pub vt: VectorField,
    pub patches: Vec<AppliedPatch>,
    pub delta: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairDiagnostics {
    pub residual: f64,
    pub membership_fraction: f64,
    pub max_gradient: f64,
    pub max_ut: f64,
    pub max_divergence_defect: f64,
    pub boundary_trace_change: f64,
    pub patches: usize,
}

impl AdmissiblePair {
    pub fn from_datum(datum: Arc<BoundaryDatum>) -> Self {
        Self {
            u: datum.u.clone(),
            v: datum.v.clone(),
            du: datum.du.clone(),
            ut: datum.ut.clone(),
            vt: datum.vt.clone(),
            patches: Vec::new(),
            delta: datum.profile.delta,
            mu: datum.mu,
            datum,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.u.grid
    }

    pub fn point(&self, k: usize, s: usize) -> ReducedPoint {
        ReducedPoint::new(self.du.at(k, s), self.vt.at(k, s))
    }

    /// `|v_t - sigma(Du)|` at one node.
    pub fn node_residual(&self, k: usize, s: usize) -> f64 {
        let p = self.du.at(k, s);
        let beta = self.vt.at(k, s);
        let mut sig = vec![0.0; p.len()];
        sigma_into(&p, &mut sig);
        beta.iter().zip(&sig).map(|(b, x)| (b - x).powi(2)).sum::<f64>().sqrt()
    }

    /// Trapezoid integral of the node residual over interior nodes,
    /// divided by `|Omega_T|`.
    pub fn residual(&self) -> f64 {
        let g = self.grid();
        let ws = g.space_weights();
        let wt = g.time_weights();
        let mut acc = 0.0;
        for (k, wk) in wt.iter().enumerate() {
            for (s, w) in ws.iter().enumerate() {
                if self.is_interior(k, s) {
                    acc += wk * w * self.node_residual(k, s);
                }
            }
        }
        acc / g.spacetime_volume()
    }

    pub fn is_interior(&self, k: usize, s: usize) -> bool {
        let g = self.grid();
        k > 0 && k < g.nt && !g.on_boundary(s)
    }

    pub fn diagnostics(&self) -> PairDiagnostics {
        let g = self.grid();
        let ns = g.n_space();
        let n = g.dim();
        let mut interior = 0usize;
        let mut member = 0usize;
        let mut max_div: f64 = 0.0;
        let mut trace: f64 = 0.0;
        let m_minus = self.datum.profile.m_minus;
        for k in 0..g.n_levels() {
            let comps: Vec<&[f64]> = (0..n).map(|a| self.v.component_slice(a, k)).collect();
            let div = node_divergence(g, &comps);
            for s in 0..ns {
                if self.is_interior(k, s) {
                    interior += 1;
                    if classify(&self.point(k, s), self.delta, m_minus) != Membership::Outside {
                        member += 1;
                    }
                    max_div = max_div.max((div[s] - self.u.at(k, s)).abs());
                } else {
                    let i = k * ns + s;
                    trace = trace.max((self.u.values[i] - self.datum.u.values[i]).abs());
                    for a in 0..n {
                        trace = trace.max((self.v.components[a][i] - self.datum.v.components[a][i]).abs());
                    }
                }
            }
        }
        PairDiagnostics {
            residual: self.residual(),
            membership_fraction: member as f64 / interior.max(1) as f64,
            max_gradient: self.du.sup_norm(),
            max_ut: self.ut.sup(),
            max_divergence_defect: max_div,
            boundary_trace_change: trace,
            patches: self.patches.len(),
        }
    }
}

/// Free-function form of [`AdmissiblePair::residual`].
pub fn residual(pair: &AdmissiblePair) -> f64 {
    pair.residual()
}
