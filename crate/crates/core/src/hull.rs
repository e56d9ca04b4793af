//! Membership tests for the lamination hull of the Perona-Malik graph and
//! the closed-form rank-one splitting of its points.
//!
//! Points are reduced pairs `(p, beta)` with `p` a spatial gradient and
//! `beta` the time derivative of the vector potential. The graph is
//! `beta = sigma(p)`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::flux::{m_bounds, sigma_into};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedPoint {
    pub p: Vec<f64>,
    pub beta: Vec<f64>,
}

impl ReducedPoint {
    pub fn new(p: Vec<f64>, beta: Vec<f64>) -> Self {
        assert_eq!(p.len(), beta.len(), "p and beta must share a dimension");
        Self { p, beta }
    }

    pub fn dim(&self) -> usize {
        self.p.len()
    }

    /// The graph point `(p, sigma(p))`.
    pub fn on_graph(p: Vec<f64>) -> Self {
        let mut beta = vec![0.0; p.len()];
        sigma_into(&p, &mut beta);
        Self { p, beta }
    }

    /// Euclidean distance to another point in (p, beta) space.
    pub fn distance(&self, other: &ReducedPoint) -> f64 {
        let dp: f64 = self.p.iter().zip(&other.p).map(|(a, b)| (a - b).powi(2)).sum();
        let db: f64 = self.beta.iter().zip(&other.beta).map(|(a, b)| (a - b).powi(2)).sum();
        (dp + db).sqrt()
    }

    /// `|beta - sigma(p)|`.
    pub fn graph_defect(&self) -> f64 {
        let mut s = vec![0.0; self.dim()];
        sigma_into(&self.p, &mut s);
        s.iter()
            .zip(&self.beta)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Full space-time gradient of a pair `(u, v)`: `[[p, c], [B, beta]]`.
#[derive(Debug, Clone)]
pub struct SpaceTimeJacobian {
    pub p: Vec<f64>,
    pub c: f64,
    pub b: DMatrix<f64>,
    pub beta: Vec<f64>,
}

impl SpaceTimeJacobian {
    /// Absolute gap in `trace B = c`.
    pub fn trace_deviation(&self) -> f64 {
        (self.b.trace() - self.c).abs()
    }

    pub fn reduced(&self) -> ReducedPoint {
        ReducedPoint::new(self.p.clone(), self.beta.clone())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `|beta|^2 + (p.beta)^2 - p.beta`; negative exactly on the lamination hull.
pub fn lamination_expr(point: &ReducedPoint) -> f64 {
    let pb = dot(&point.p, &point.beta);
    dot(&point.beta, &point.beta) + pb * pb - pb
}

/// `|(1 - p.beta) p - beta|`.
pub fn offset_norm(point: &ReducedPoint) -> f64 {
    let pb = dot(&point.p, &point.beta);
    point
        .p
        .iter()
        .zip(&point.beta)
        .map(|(p, b)| ((1.0 - pb) * p - b).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// `delta * offset_norm + lamination_expr`; negative exactly on `S_delta`.
pub fn s_delta_expr(point: &ReducedPoint, delta: f64) -> f64 {
    delta * offset_norm(point) + lamination_expr(point)
}

pub fn in_l_k0(point: &ReducedPoint) -> bool {
    lamination_expr(point) < 0.0
}

pub fn in_s_delta(point: &ReducedPoint, delta: f64) -> bool {
    s_delta_expr(point, delta) < 0.0
}

/// Where a reduced point sits relative to `K_delta` and `S_delta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Membership {
    /// On the graph with `|p| <= m_minus`, up to tolerance.
    Graph,
    /// Strictly inside `S_delta`.
    Hull,
    Outside,
}

/// Graph defect accepted as "on the graph".
pub const GRAPH_DEFECT_TOL: f64 = 1e-9;
/// Slack on `|p| <= m_minus` for graph points.
pub const GRAPH_RADIUS_TOL: f64 = 1e-6;

pub fn classify(point: &ReducedPoint, delta: f64, m_minus: f64) -> Membership {
    if in_s_delta(point, delta) {
        return Membership::Hull;
    }
    if norm(&point.p) <= m_minus + GRAPH_RADIUS_TOL && point.graph_defect() <= GRAPH_DEFECT_TOL {
        return Membership::Graph;
    }
    Membership::Outside
}

/// Intermediate scalars of the closed-form splitting, kept for auditing.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FrameScalars {
    pub l: f64,
    pub k: f64,
    pub u: f64,
    pub x: f64,
    pub v: f64,
    pub y: f64,
}

/// A rank-one splitting `xi = lam * xi_plus + (1 - lam) * xi_minus` with
/// `xi_pm = (p + t_pm q, beta + t_pm gamma)` on the Perona-Malik graph.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankOneFrame {
    pub q: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Time slope of the oscillation direction.
    pub b: f64,
    pub t_minus: f64,
    pub t_plus: f64,
    pub lam: f64,
    pub scalars: FrameScalars,
}

impl RankOneFrame {
    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn is_collinear(&self) -> bool {
        norm(&self.gamma) < 1e-12
    }

    pub fn at(&self, point: &ReducedPoint, t: f64) -> ReducedPoint {
        ReducedPoint::new(
            point.p.iter().zip(&self.q).map(|(p, q)| p + t * q).collect(),
            point.beta.iter().zip(&self.gamma).map(|(b, g)| b + t * g).collect(),
        )
    }

    /// `(xi_minus, xi_plus)`.
    pub fn endpoints(&self, point: &ReducedPoint) -> (ReducedPoint, ReducedPoint) {
        (self.at(point, self.t_minus), self.at(point, self.t_plus))
    }

    /// Frobenius norm of the reduced direction `(q, gamma)`.
    pub fn reduced_direction_norm(&self) -> f64 {
        (dot(&self.q, &self.q) + dot(&self.gamma, &self.gamma)).sqrt()
    }

    /// The rank-one matrix `(1, gamma / b)^T (q, b)` of size (n+1) x (n+1).
    pub fn eta_matrix(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut left = DVector::zeros(n + 1);
        left[0] = 1.0;
        for i in 0..n {
            left[i + 1] = self.gamma[i] / self.b;
        }
        let mut right = DVector::zeros(n + 1);
        for j in 0..n {
            right[j] = self.q[j];
        }
        right[n] = self.b;
        &left * right.transpose()
    }

    /// Largest graph defect of the two endpoints.
    pub fn endpoint_residual(&self, point: &ReducedPoint) -> f64 {
        let (a, b) = self.endpoints(point);
        a.graph_defect().max(b.graph_defect())
    }
}

/// Closed-form rank-one splitting of a point of the lamination hull.
///
/// `b` is the time slope attached to the frame; it must be positive.
pub fn rank_one_decompose(point: &ReducedPoint, b: f64) -> Result<RankOneFrame> {
    if !(b > 0.0) {
        return Err(Error::Precondition(format!("time slope b = {b} must be positive")));
    }
    let g = lamination_expr(point);
    if !(g < 0.0) {
        return Err(Error::Precondition(format!(
            "point is outside the lamination hull (expression = {g:e})"
        )));
    }
    let p = &point.p;
    let beta = &point.beta;
    let pb = dot(p, beta);
    let bb = dot(beta, beta);
    let pp = dot(p, p);
    let one_m = 1.0 - pb;
    let l = 1.0 / one_m;
    let den = one_m * pb - bb;
    let k = (one_m * pp - pb) / den;
    let u = den / offset_norm(point);
    let x = k * u;
    let v = x - 1.0 / u;
    let y = l * v;
    let det = x * v - y * u;
    let q: Vec<f64> = p.iter().zip(beta).map(|(pi, bi)| (v * pi - y * bi) / det).collect();
    let gamma: Vec<f64> = p.iter().zip(beta).map(|(pi, bi)| (-u * pi + x * bi) / det).collect();

    let gg = dot(&gamma, &gamma);
    let lin = 2.0 * x - 1.0 / u;
    let cst = x * x + gg * y * y + 1.0 - x / u;
    let disc = lin * lin - 4.0 * cst;
    if !(disc > 0.0) {
        return Err(Error::Numerical(format!("splitting quadratic has discriminant {disc:e}")));
    }
    let sq = disc.sqrt();
    // stable pair of roots
    let big = -0.5 * (lin + lin.signum() * sq);
    let (r1, r2) = (big, cst / big);
    let (t_minus, t_plus) = if r1 < r2 { (r1, r2) } else { (r2, r1) };
    let values = [l, k, u, x, v, y, det, t_minus, t_plus];
    if values.iter().any(|z| !z.is_finite()) {
        return Err(Error::Numerical("non-finite value in splitting".into()));
    }
    if !(t_minus < 0.0 && t_plus > 0.0) {
        return Err(Error::Numerical(format!(
            "roots ({t_minus}, {t_plus}) do not straddle zero"
        )));
    }
    let lam = -t_minus / (t_plus - t_minus);
    Ok(RankOneFrame {
        q,
        gamma,
        b,
        t_minus,
        t_plus,
        lam,
        scalars: FrameScalars { l, k, u, x, v, y },
    })
}

/// Default time slope for a frame: small relative to the segment length.
pub fn default_slope(t_minus: f64, t_plus: f64) -> f64 {
    1e-2 / (t_plus - t_minus)
}

/// True when `samples` interior points of the open segment all lie in `S_delta`.
pub fn segment_in_s_delta(
    frame: &RankOneFrame,
    point: &ReducedPoint,
    delta: f64,
    samples: usize,
) -> bool {
    let samples = samples.max(1);
    (1..=samples).all(|i| {
        let s = i as f64 / (samples + 1) as f64;
        let t = frame.t_minus + s * (frame.t_plus - frame.t_minus);
        in_s_delta(&frame.at(point, t), delta)
    })
}

/// Result of a numerical search for a rank-one splitting.
#[derive(Debug, Clone)]
pub struct OracleOutcome {
    pub found: bool,
    pub q: Vec<f64>,
    pub gamma: Vec<f64>,
    pub t_minus: f64,
    pub t_plus: f64,
    pub residual: f64,
    pub attempts: usize,
}

/// Searches for a splitting of `point` by damped Newton iteration on the
/// defining equations, started from `directions` random frames.
///
/// Unknowns are `q`, `gamma` and `t_minus = -exp(a)`, `t_plus = exp(c)`;
/// equations are the two graph conditions plus `|q| = 1` and `gamma . q = 0`.
pub fn brute_force_hull_oracle(point: &ReducedPoint, directions: usize, seed: u64) -> bool {
    oracle_search(point, directions, seed).found
}

pub fn oracle_search(point: &ReducedPoint, directions: usize, seed: u64) -> OracleOutcome {
    let n = point.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = OracleOutcome {
        found: false,
        q: vec![0.0; n],
        gamma: vec![0.0; n],
        t_minus: 0.0,
        t_plus: 0.0,
        residual: f64::INFINITY,
        attempts: 0,
    };
    for attempt in 1..=directions {
        let mut q: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let qn = norm(&q).max(1e-3);
        q.iter_mut().for_each(|z| *z /= qn);
        let mut gamma: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let proj = dot(&gamma, &q);
        gamma.iter_mut().zip(&q).for_each(|(g, qi)| *g -= proj * qi);
        let gn = norm(&gamma);
        let mag = 10.0 * rng.gen::<f64>().powi(2);
        if gn > 1e-12 {
            gamma.iter_mut().for_each(|g| *g *= mag / gn);
        }
        let a = rng.gen_range(0.05f64..5.0).ln();
        let c = rng.gen_range(0.05f64..5.0).ln();

        let mut z = Vec::with_capacity(2 * n + 2);
        z.extend_from_slice(&q);
        z.extend_from_slice(&gamma);
        z.push(a);
        z.push(c);
        let (z, res) = newton(point, z);
        best.attempts = attempt;
        if res < best.residual {
            best.residual = res;
            best.q = z[..n].to_vec();
            best.gamma = z[n..2 * n].to_vec();
            best.t_minus = -z[2 * n].exp();
            best.t_plus = z[2 * n + 1].exp();
        }
        if res < 1e-8 {
            best.found = true;
            return best;
        }
    }
    best
}

fn oracle_residual(point: &ReducedPoint, z: &[f64]) -> Vec<f64> {
    let n = point.dim();
    let q = &z[..n];
    let gamma = &z[n..2 * n];
    let ts = [-z[2 * n].exp(), z[2 * n + 1].exp()];
    let mut r = Vec::with_capacity(2 * n + 2);
    let mut s = vec![0.0; n];
    for t in ts {
        let pt: Vec<f64> = point.p.iter().zip(q).map(|(p, qi)| p + t * qi).collect();
        sigma_into(&pt, &mut s);
        for i in 0..n {
            r.push(s[i] - point.beta[i] - t * gamma[i]);
        }
    }
    r.push(dot(q, q) - 1.0);
    r.push(dot(gamma, q));
    r
}

fn sigma_jacobian(p: &[f64]) -> DMatrix<f64> {
    let n = p.len();
    let s = dot(p, p);
    let d = 1.0 + s;
    DMatrix::from_fn(n, n, |i, j| {
        let diag = if i == j { d } else { 0.0 };
        (diag - 2.0 * p[i] * p[j]) / (d * d)
    })
}

fn oracle_jacobian(point: &ReducedPoint, z: &[f64]) -> DMatrix<f64> {
    let n = point.dim();
    let m = 2 * n + 2;
    let q = &z[..n];
    let gamma = &z[n..2 * n];
    let ts = [-z[2 * n].exp(), z[2 * n + 1].exp()];
    let mut jac = DMatrix::zeros(m, m);
    for (block, t) in ts.iter().enumerate() {
        let pt: Vec<f64> = point.p.iter().zip(q).map(|(p, qi)| p + t * qi).collect();
        let js = sigma_jacobian(&pt);
        let jq = &js * DVector::from_column_slice(q);
        for i in 0..n {
            let row = block * n + i;
            for j in 0..n {
                jac[(row, j)] = t * js[(i, j)];
            }
            jac[(row, n + i)] = -t;
            // d t / d(log-parameter) = t
            jac[(row, 2 * n + block)] = (jq[i] - gamma[i]) * t;
        }
    }
    for j in 0..n {
        jac[(2 * n, j)] = 2.0 * q[j];
        jac[(2 * n + 1, j)] = gamma[j];
        jac[(2 * n + 1, n + j)] = q[j];
    }
    jac
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn newton(point: &ReducedPoint, mut z: Vec<f64>) -> (Vec<f64>, f64) {
    let n = point.dim();
    let mut r = oracle_residual(point, &z);
    let mut res = max_abs(&r);
    for _ in 0..60 {
        if res < 1e-13 {
            break;
        }
        let jac = oracle_jacobian(point, &z);
        let rhs = DVector::from_column_slice(&r);
        let Some(step) = jac.lu().solve(&rhs) else {
            break;
        };
        let mut alpha = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let trial: Vec<f64> = z.iter().zip(step.iter()).map(|(a, d)| a - alpha * d).collect();
            if trial[2 * n].abs() > 12.0 || trial[2 * n + 1].abs() > 12.0 {
                alpha *= 0.5;
                continue;
            }
            let rt = oracle_residual(point, &trial);
            let rn = max_abs(&rt);
            if rn.is_finite() && rn < res {
                z = trial;
                r = rt;
                res = rn;
                improved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !improved {
            break;
        }
    }
    (z, res)
}

/// Sampled envelope of `S_delta`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub delta: f64,
    pub samples: usize,
    pub accepted: usize,
    pub sup_p: f64,
    pub sup_beta: f64,
    pub bound_p: f64,
    pub bound_beta: f64,
    pub inf_p: f64,
    pub inf_beta: f64,
    /// `m_minus(delta)` and `delta`: the open lower bounds.
    pub lower_p: f64,
    pub lower_beta: f64,
    pub violations: usize,
}

impl EnvelopeReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Rejection-samples `S_delta` and records the largest `|p|` and `|beta|`.
///
/// Half of the proposals are uniform in a box enclosing the bounds, half are
/// collinear pairs `p = l e`, `beta = b e` with `b in (delta, 1/2)` and `l`
/// between the roots of `rho(l) = b`, which reach toward the extremes.
pub fn s_delta_bounds_check(delta: f64, samples: usize, dim: usize, seed: u64) -> Result<EnvelopeReport> {
    let (m_minus, m_plus) = m_bounds(delta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = EnvelopeReport {
        delta,
        samples,
        accepted: 0,
        sup_p: 0.0,
        sup_beta: 0.0,
        bound_p: m_plus,
        bound_beta: 0.5,
        inf_p: f64::INFINITY,
        inf_beta: f64::INFINITY,
        lower_p: m_minus,
        lower_beta: delta,
        violations: 0,
    };
    let p_box = 1.2 * m_plus;
    for i in 0..samples {
        let point = if i % 2 == 0 {
            ReducedPoint::new(
                (0..dim).map(|_| rng.gen_range(-p_box..p_box)).collect(),
                (0..dim).map(|_| rng.gen_range(-0.6..0.6)).collect(),
            )
        } else {
            let mut e: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let en = norm(&e).max(1e-9);
            e.iter_mut().for_each(|z| *z /= en);
            let b = rng.gen_range(delta..0.5);
            let (lo, hi) = m_bounds(b)?;
            let l = rng.gen_range(lo..hi);
            ReducedPoint::new(e.iter().map(|z| l * z).collect(), e.iter().map(|z| b * z).collect())
        };
        if in_s_delta(&point, delta) {
            report.accepted += 1;
            let np = norm(&point.p);
            let nb = norm(&point.beta);
            report.sup_p = report.sup_p.max(np);
            report.sup_beta = report.sup_beta.max(nb);
            report.inf_p = report.inf_p.min(np);
            report.inf_beta = report.inf_beta.min(nb);
            if np >= m_plus || nb >= 0.5 || np <= m_minus || nb <= delta {
                report.violations += 1;
            }
        }
    }
    Ok(report)
}

/// Seeded points with `sign * lamination_expr >= margin`, drawn uniformly
/// from `|p_i| <= 3`, `|beta_i| <= 0.6` by rejection.
pub fn sample_lamination_points(dim: usize, count: usize, sign: f64, margin: f64, seed: u64) -> Vec<ReducedPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let point = ReducedPoint::new(
            (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect(),
            (0..dim).map(|_| rng.gen_range(-0.6..0.6)).collect(),
        );
        if sign.signum() * lamination_expr(&point) >= margin {
            out.push(point);
        }
    }
    out
}

/// One row of a hull probe export.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HullProbeRow {
    pub p: String,
    pub beta: String,
    pub delta: f64,
    pub lamination_expr: f64,
    pub s_delta_expr: f64,
    pub in_l_k0: bool,
    pub in_s_delta: bool,
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(";")
}

impl HullProbeRow {
    pub fn new(point: &ReducedPoint, delta: f64) -> Self {
        Self {
            p: join(&point.p),
            beta: join(&point.beta),
            delta,
            lamination_expr: lamination_expr(point),
            s_delta_expr: s_delta_expr(point, delta),
            in_l_k0: in_l_k0(point),
            in_s_delta: in_s_delta(point, delta),
        }
    }
}

pub fn write_probe_csv(path: &Path, rows: &[HullProbeRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collinear_example() {
        let pt = ReducedPoint::new(vec![1.0, 0.0], vec![0.3, 0.0]);
        assert!((lamination_expr(&pt) + 0.12).abs() < 1e-15);
        let f = rank_one_decompose(&pt, 0.1).unwrap();
        assert!((f.t_plus - 2.0).abs() < 1e-12);
        assert!((f.t_minus + 2.0 / 3.0).abs() < 1e-12);
        assert!((f.q[0] - 1.0).abs() < 1e-12 && f.q[1].abs() < 1e-12);
        assert!(f.is_collinear());
        assert!((f.lam - 0.25).abs() < 1e-12);
    }

    #[test]
    fn graph_points_are_not_interior() {
        let pt = ReducedPoint::on_graph(vec![0.7, -0.2]);
        assert!(lamination_expr(&pt).abs() < 1e-15);
        assert!(matches!(rank_one_decompose(&pt, 0.1), Err(Error::Precondition(_))));
    }

    #[test]
    fn eta_is_rank_one() {
        let pt = ReducedPoint::new(vec![1.0, 0.5], vec![0.3, 0.0]);
        let f = rank_one_decompose(&pt, 0.05).unwrap();
        let sv = f.eta_matrix().singular_values();
        let mut s: Vec<f64> = sv.iter().copied().collect();
        s.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert!(s[1] <= 1e-10 * s[0]);
    }

    #[test]
    fn oracle_solves_collinear_point() {
        let pt = ReducedPoint::new(vec![1.0, 0.0], vec![0.3, 0.0]);
        let out = oracle_search(&pt, 200, 3);
        assert!(out.found, "residual {}", out.residual);
        assert!(out.t_minus < 0.0 && out.t_plus > 0.0);
    }
}
