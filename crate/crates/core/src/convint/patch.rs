//! Plane-wave oscillations and the certified patches built from them.
//!
//! A potential `h(x, t)` is turned into a pair `w = (phi, psi)` with
//! `phi = q . Dh` and `psi = (gamma (q . Dh) - q (gamma . Dh)) / b`, so that
//! `psi` is divergence free and, for `h = f(q . x + b t)`, the space-time
//! gradient of `w` is `f''` times the rank-one matrix of the frame.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cutoff::BoxCutoff;
use super::staircase::StaircaseProfile;
use crate::domain::BoxDomain;
use crate::error::{Error, Result};
use crate::flux::sigma_into;
use crate::hull::{rank_one_decompose, s_delta_expr, RankOneFrame, ReducedPoint};

/// Derivatives of a scalar potential at one space-time point.
#[derive(Debug, Clone, Default)]
pub struct PotentialJet {
    pub value: f64,
    pub grad: Vec<f64>,
    /// Row-major spatial Hessian.
    pub hess: Vec<f64>,
    pub dt: f64,
    pub grad_t: Vec<f64>,
}

pub trait Potential {
    fn jet(&self, x: &[f64], t: f64) -> PotentialJet;
}

/// The pair `(phi, psi)` and its first derivatives at one point.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairSample {
    pub phi: f64,
    pub psi: Vec<f64>,
    pub dphi: Vec<f64>,
    pub phi_t: f64,
    /// Row-major, `dpsi[i * n + j] = d psi_i / d x_j`.
    pub dpsi: Vec<f64>,
    pub psi_t: Vec<f64>,
    pub div_psi: f64,
}

impl PairSample {
    pub fn zero(n: usize) -> Self {
        Self {
            phi: 0.0,
            psi: vec![0.0; n],
            dphi: vec![0.0; n],
            phi_t: 0.0,
            dpsi: vec![0.0; n * n],
            psi_t: vec![0.0; n],
            div_psi: 0.0,
        }
    }

    /// Space-time gradient `[[Dphi, phi_t], [Dpsi, psi_t]]`, row-major (n+1)^2.
    pub fn gradient_matrix(&self) -> Vec<f64> {
        let n = self.dphi.len();
        let m = n + 1;
        let mut g = vec![0.0; m * m];
        g[..n].copy_from_slice(&self.dphi);
        g[n] = self.phi_t;
        for i in 0..n {
            for j in 0..n {
                g[(i + 1) * m + j] = self.dpsi[i * n + j];
            }
            g[(i + 1) * m + n] = self.psi_t[i];
        }
        g
    }

    pub fn sup(&self) -> f64 {
        let psi = self.psi.iter().map(|x| x * x).sum::<f64>().sqrt();
        self.phi.abs().max(psi)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn mat_vec(m: &[f64], v: &[f64]) -> Vec<f64> {
    let n = v.len();
    (0..n).map(|i| dot(&m[i * n..(i + 1) * n], v)).collect()
}

/// Applies the pair operator to one jet of a potential.
pub fn p_operator(jet: &PotentialJet, q: &[f64], gamma: &[f64], b: f64) -> PairSample {
    let n = q.len();
    let hq = mat_vec(&jet.hess, q);
    let hg = mat_vec(&jet.hess, gamma);
    let qd = dot(q, &jet.grad);
    let gd = dot(gamma, &jet.grad);
    let qdt = dot(q, &jet.grad_t);
    let gdt = dot(gamma, &jet.grad_t);
    let mut psi = vec![0.0; n];
    let mut psi_t = vec![0.0; n];
    let mut dpsi = vec![0.0; n * n];
    for i in 0..n {
        psi[i] = (gamma[i] * qd - q[i] * gd) / b;
        psi_t[i] = (gamma[i] * qdt - q[i] * gdt) / b;
        for j in 0..n {
            dpsi[i * n + j] = (gamma[i] * hq[j] - q[i] * hg[j]) / b;
        }
    }
    let div_psi = (0..n).map(|i| dpsi[i * n + i]).sum();
    PairSample {
        phi: qd,
        psi,
        dphi: hq,
        phi_t: qdt,
        dpsi,
        psi_t,
        div_psi,
    }
}

/// Potential `h = cutoff(x, t) * f(q . x + b t)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlaneWavePotential {
    pub q: Vec<f64>,
    pub b: f64,
    pub profile: StaircaseProfile,
    pub cutoff: BoxCutoff,
}

impl Potential for PlaneWavePotential {
    fn jet(&self, x: &[f64], t: f64) -> PotentialJet {
        let n = x.len();
        let mut z = x.to_vec();
        z.push(t);
        let c = self.cutoff.jet(&z);
        if c.value == 0.0 && c.grad.iter().all(|g| *g == 0.0) {
            return PotentialJet {
                value: 0.0,
                grad: vec![0.0; n],
                hess: vec![0.0; n * n],
                dt: 0.0,
                grad_t: vec![0.0; n],
            };
        }
        let s = dot(&self.q, x) + self.b * t;
        let f = self.profile.eval(s);
        let m = n + 1;
        let rho = c.value;
        let rho_t = c.grad[n];
        let q = &self.q;
        let b = self.b;
        let grad: Vec<f64> = (0..n).map(|i| f.f * c.grad[i] + rho * f.d1 * q[i]).collect();
        let mut hess = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                hess[i * n + j] = f.f * c.hess[i * m + j]
                    + f.d1 * (c.grad[i] * q[j] + q[i] * c.grad[j])
                    + rho * f.d2 * q[i] * q[j];
            }
        }
        let dt = f.f * rho_t + rho * f.d1 * b;
        let grad_t: Vec<f64> = (0..n)
            .map(|i| {
                f.f * c.hess[i * m + n] + f.d1 * b * c.grad[i] + f.d1 * rho_t * q[i] + rho * f.d2 * b * q[i]
            })
            .collect();
        PotentialJet {
            value: rho * f.f,
            grad,
            hess,
            dt,
            grad_t,
        }
    }
}

/// Inputs of a two-level oscillation on a space-time box.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OscillationSpec {
    pub frame: RankOneFrame,
    pub lam1: f64,
    pub lam2: f64,
    /// Spatial box with its time interval.
    pub region: BoxDomain,
    pub eps: f64,
    /// Placement of the periods inside the spare room of the window, in [0, 1].
    pub phase: f64,
    /// Ramp widths of the cutoff per axis (space then time); chosen from `eps` when absent.
    pub ramp_width: Option<Vec<f64>>,
    /// Largest `|f'|`; chosen from `eps` and the cutoff when absent.
    pub slope_amplitude: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OscillationCertificates {
    pub max_div_psi: f64,
    pub bad_measure: f64,
    pub max_segment_distance: f64,
    pub sup_norm: f64,
    pub max_slice_mean: f64,
    pub samples: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Oscillation {
    pub spec: OscillationSpec,
    pub potential: PlaneWavePotential,
    pub certificates: Option<OscillationCertificates>,
}

impl Oscillation {
    pub fn eval(&self, x: &[f64], t: f64) -> PairSample {
        let jet = self.potential.jet(x, t);
        p_operator(&jet, &self.spec.frame.q, &self.spec.frame.gamma, self.spec.frame.b)
    }

    /// Distance of a gradient matrix from the segment `[-lam1, lam2] eta`.
    pub fn segment_distance(&self, g: &[f64]) -> (f64, f64) {
        let eta = self.spec.frame.eta_matrix();
        let e: Vec<f64> = eta.transpose().iter().copied().collect();
        let ee = dot(&e, &e);
        let s = (dot(g, &e) / ee).clamp(-self.spec.lam1, self.spec.lam2);
        let d = g.iter().zip(&e).map(|(a, b)| (a - s * b).powi(2)).sum::<f64>().sqrt();
        (d, s)
    }

    /// Distance of a gradient matrix from the two levels.
    pub fn level_distance(&self, g: &[f64]) -> f64 {
        let eta = self.spec.frame.eta_matrix();
        let e: Vec<f64> = eta.transpose().iter().copied().collect();
        let d = |s: f64| g.iter().zip(&e).map(|(a, b)| (a - s * b).powi(2)).sum::<f64>().sqrt();
        d(-self.spec.lam1).min(d(self.spec.lam2))
    }

    pub fn eta_norm(&self) -> f64 {
        self.spec.frame.eta_matrix().norm()
    }
}

fn region_bounds(region: &BoxDomain) -> Result<(Vec<f64>, Vec<f64>)> {
    let (t0, t1) = region
        .time
        .ok_or_else(|| Error::Domain("oscillation region needs a time interval".into()))?;
    let mut lo: Vec<f64> = region.intervals.iter().map(|iv| iv.0).collect();
    let mut hi: Vec<f64> = region.intervals.iter().map(|iv| iv.1).collect();
    lo.push(t0);
    hi.push(t1);
    Ok((lo, hi))
}

/// Midpoints of a uniform `per_axis^d` sampling of the box `[lo, hi]`.
pub fn sample_points(lo: &[f64], hi: &[f64], per_axis: usize) -> Vec<Vec<f64>> {
    let d = lo.len();
    let total = per_axis.pow(d as u32);
    (0..total)
        .map(|mut idx| {
            (0..d)
                .map(|k| {
                    let i = idx % per_axis;
                    idx /= per_axis;
                    lo[k] + (hi[k] - lo[k]) * (i as f64 + 0.5) / per_axis as f64
                })
                .collect()
        })
        .collect()
}

/// Builds the plane-wave oscillation described by `spec` without certifying it.
pub fn assemble_oscillation(spec: &OscillationSpec) -> Result<Oscillation> {
    let (lo, hi) = region_bounds(&spec.region)?;
    let d = lo.len();
    let n = d - 1;
    let frame = &spec.frame;
    if frame.dim() != n {
        return Err(Error::Domain("frame and region dimensions differ".into()));
    }
    if !(spec.eps > 0.0) {
        return Err(Error::Domain(format!("eps = {} must be positive", spec.eps)));
    }
    let volume: f64 = (0..d).map(|k| hi[k] - lo[k]).product();
    let width = match &spec.ramp_width {
        Some(w) => w.clone(),
        None => {
            let r = (0.45 * spec.eps / volume).min(0.9);
            let kappa = (0.5 * (1.0 - (1.0 - r).powf(1.0 / d as f64))).min(0.25);
            (0..d).map(|k| kappa * (hi[k] - lo[k])).collect()
        }
    };
    let cutoff = BoxCutoff::new(lo.clone(), hi.clone(), width);

    // s = q . x + b t over the corners of the box
    let mut smin = f64::INFINITY;
    let mut smax = f64::NEG_INFINITY;
    for corner in 0..(1usize << d) {
        let mut s = 0.0;
        for k in 0..d {
            let v = if corner >> k & 1 == 1 { hi[k] } else { lo[k] };
            s += if k < n { frame.q[k] * v } else { frame.b * v };
        }
        smin = smin.min(s);
        smax = smax.max(s);
    }
    let (l1, l2) = (spec.lam1, spec.lam2);
    let tau = (spec.eps / (4.0 * volume)).min(0.5);
    let period_formula = tau * 1f64.min(l1).min(l2) / (4.0 * (l1 + l2));
    let amplitude = match spec.slope_amplitude {
        Some(a) => a,
        None => {
            let gain = 1.0 + 2.0 * dot(&frame.gamma, &frame.gamma).sqrt() / frame.b.abs();
            1e-2 * spec.eps / (gain * (1.0 + cutoff.gradient_bound()))
        }
    };
    // largest |f'| of the staircase is lam1 lam2 P / (2 (lam1 + lam2))
    let period_amp = 2.0 * (l1 + l2) * amplitude / (l1 * l2);
    let period = period_formula.min(period_amp);
    let profile = StaircaseProfile::with_period(l1, l2, (smin, smax), period, tau, spec.phase)?;
    Ok(Oscillation {
        spec: spec.clone(),
        potential: PlaneWavePotential {
            q: frame.q.clone(),
            b: frame.b,
            profile,
            cutoff,
        },
        certificates: None,
    })
}

/// Measures the oscillation certificates on `per_axis^(n+1)` midpoint samples.
pub fn certify_oscillation(osc: &Oscillation, per_axis: usize) -> Result<OscillationCertificates> {
    let (lo, hi) = region_bounds(&osc.spec.region)?;
    let d = lo.len();
    let n = d - 1;
    let pts = sample_points(&lo, &hi, per_axis);
    let cell: f64 = (0..d).map(|k| (hi[k] - lo[k]) / per_axis as f64).product();
    let spatial_cell: f64 = (0..n).map(|k| (hi[k] - lo[k]) / per_axis as f64).product();
    let level_tol = 1e-8 * (1.0 + osc.eta_norm() * osc.spec.lam1.max(osc.spec.lam2));
    let mut cert = OscillationCertificates {
        max_div_psi: 0.0,
        bad_measure: 0.0,
        max_segment_distance: 0.0,
        sup_norm: 0.0,
        max_slice_mean: 0.0,
        samples: pts.len(),
        passed: false,
    };
    let mut slice_sums = vec![0.0; per_axis];
    let mut scale: f64 = 0.0;
    for (idx, z) in pts.iter().enumerate() {
        let w = osc.eval(&z[..n], z[n]);
        let g = w.gradient_matrix();
        scale = scale.max(g.iter().fold(0.0f64, |m, x| m.max(x.abs())));
        cert.max_div_psi = cert.max_div_psi.max(w.div_psi.abs());
        if osc.level_distance(&g) > level_tol {
            cert.bad_measure += cell;
        }
        cert.max_segment_distance = cert.max_segment_distance.max(osc.segment_distance(&g).0);
        cert.sup_norm = cert.sup_norm.max(w.sup());
        let time_slot = idx / per_axis.pow(n as u32);
        slice_sums[time_slot] += w.phi * spatial_cell;
    }
    cert.max_slice_mean = slice_sums.iter().fold(0.0, |m, x| m.max(x.abs()));
    let eps = osc.spec.eps;
    cert.passed = cert.max_div_psi <= 1e-10 * scale.max(1.0)
        && cert.bad_measure < eps
        && cert.max_segment_distance < eps
        && cert.sup_norm < eps
        && cert.max_slice_mean <= 1e-10;
    Ok(cert)
}

/// Builds and certifies a two-level oscillation, shrinking the slope
/// amplitude when a sampled certificate fails.
pub fn build_oscillation(spec: &OscillationSpec) -> Result<Oscillation> {
    let mut spec = spec.clone();
    let mut last = None;
    for _ in 0..6 {
        let mut osc = assemble_oscillation(&spec)?;
        let cert = certify_oscillation(&osc, 64)?;
        if cert.passed {
            osc.certificates = Some(cert);
            return Ok(osc);
        }
        let amp = osc.potential.profile.max_slope();
        spec.slope_amplitude = Some(amp / 8.0);
        last = Some(cert);
    }
    Err(Error::certificate("oscillation", format!("{last:?}")))
}

/// Sampling and retry knobs for patch certification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatchOptions {
    pub samples_per_axis: usize,
    pub perturbations: usize,
    pub perturbation_samples_per_axis: usize,
    /// Sign of the time slope.
    pub b_sign: f64,
    pub phase: f64,
    pub ramp_width: Option<Vec<f64>>,
    pub max_retries: usize,
    pub seed: u64,
}

impl Default for PatchOptions {
    fn default() -> Self {
        Self {
            samples_per_axis: 64,
            perturbations: 100,
            perturbation_samples_per_axis: 16,
            b_sign: 1.0,
            phase: 0.5,
            ramp_width: None,
            max_retries: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatchCertificates {
    pub max_div_psi: f64,
    pub membership_ok: bool,
    pub perturbation_ok: bool,
    pub sup_norm: f64,
    pub residual_integral: f64,
    pub residual_budget: f64,
    pub max_slice_mean: f64,
    pub sup_phi_t: f64,
    pub stability_radius: f64,
    pub rho: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Patch {
    pub target: ReducedPoint,
    pub delta: f64,
    pub shrink: f64,
    pub lam_prime: f64,
    pub oscillation: Option<Oscillation>,
    pub certificates: Option<PatchCertificates>,
}

impl Patch {
    /// The identity patch of an empty region.
    pub fn empty(target: ReducedPoint, delta: f64) -> Self {
        Self {
            target,
            delta,
            shrink: 0.0,
            lam_prime: 0.0,
            oscillation: None,
            certificates: None,
        }
    }

    pub fn eval(&self, x: &[f64], t: f64) -> PairSample {
        match &self.oscillation {
            Some(o) => o.eval(x, t),
            None => PairSample::zero(x.len()),
        }
    }

    pub fn frame(&self) -> Option<&RankOneFrame> {
        self.oscillation.as_ref().map(|o| &o.spec.frame)
    }
}

/// Residual `|beta' - sigma(p')|` after adding the pair gradient.
pub fn patched_residual(target: &ReducedPoint, w: &PairSample) -> f64 {
    let n = target.dim();
    let p: Vec<f64> = (0..n).map(|i| target.p[i] + w.dphi[i]).collect();
    let mut s = vec![0.0; n];
    sigma_into(&p, &mut s);
    (0..n)
        .map(|i| (target.beta[i] + w.psi_t[i] - s[i]).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn patched_point(target: &ReducedPoint, w: &PairSample) -> ReducedPoint {
    let n = target.dim();
    ReducedPoint::new(
        (0..n).map(|i| target.p[i] + w.dphi[i]).collect(),
        (0..n).map(|i| target.beta[i] + w.psi_t[i]).collect(),
    )
}

/// First-order distance to the boundary of `S_delta`: `-E / |grad E|`.
pub fn s_delta_margin(point: &ReducedPoint, delta: f64) -> f64 {
    let e = s_delta_expr(point, delta);
    let n = point.dim();
    let h = 1e-7;
    let mut g2 = 0.0;
    for k in 0..2 * n {
        let mut a = point.clone();
        let mut b = point.clone();
        if k < n {
            a.p[k] += h;
            b.p[k] -= h;
        } else {
            a.beta[k - n] += h;
            b.beta[k - n] -= h;
        }
        let d = (s_delta_expr(&a, delta) - s_delta_expr(&b, delta)) / (2.0 * h);
        g2 += d * d;
    }
    -e / g2.sqrt().max(1e-300)
}

/// Smallest margin over the segment between the shrunk endpoints.
fn segment_margin(frame: &RankOneFrame, target: &ReducedPoint, delta: f64, shrink: f64) -> f64 {
    let span = frame.t_plus - frame.t_minus;
    let a = frame.t_minus + shrink * span;
    let b = frame.t_plus - shrink * span;
    (0..=32)
        .map(|i| {
            let t = a + (b - a) * i as f64 / 32.0;
            s_delta_margin(&frame.at(target, t), delta)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Builds a certified patch around `target` on the space-time `region`.
///
/// `rho` bounds the sup norm of the pair and of `phi_t`; `eps_budget`
/// with `ambient_volume` sets the residual budget `eps |region| / |ambient|`.
pub fn build_patch(
    target: &ReducedPoint,
    delta: f64,
    region: &BoxDomain,
    rho: f64,
    eps_budget: f64,
    ambient_volume: f64,
    opts: &PatchOptions,
) -> Result<Patch> {
    let volume = region.spacetime_volume();
    if volume == 0.0 {
        return Ok(Patch::empty(target.clone(), delta));
    }
    if region.time.is_none() {
        return Err(Error::Domain("patch region needs a time interval".into()));
    }
    let e = s_delta_expr(target, delta);
    if e > -1e-6 {
        return Err(Error::Precondition(format!(
            "target margin {e:e} is not below -1e-6"
        )));
    }
    if !(rho > 0.0 && eps_budget > 0.0) {
        return Err(Error::Domain("rho and eps must be positive".into()));
    }
    let mut frame = rank_one_decompose(target, 1.0)?;
    let span = frame.t_plus - frame.t_minus;
    frame.b = opts.b_sign.signum() * rho / (4.0 * span);
    let c_frame = span * frame.reduced_direction_norm();
    let mut shrink = (-e / (4.0 * c_frame)).min(0.25 * frame.lam.min(1.0 - frame.lam));
    let residual_budget = eps_budget * volume / ambient_volume;
    let n = target.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut amplitude_scale = 1.0;
    let mut last_detail = String::new();

    for _ in 0..opts.max_retries.max(1) {
        let lam_prime = (frame.lam - shrink) / (1.0 - 2.0 * shrink);
        let lam1 = lam_prime * (1.0 - 2.0 * shrink) * span;
        let lam2 = (1.0 - lam_prime) * (1.0 - 2.0 * shrink) * span;
        let stability_radius = 0.5 * segment_margin(&frame, target, delta, shrink);
        if !(stability_radius > 0.0) {
            shrink *= 0.5;
            continue;
        }
        let eps_osc = (0.5 * rho).min(0.25 * residual_budget).min(0.5 * stability_radius);
        let mut spec = OscillationSpec {
            frame: frame.clone(),
            lam1,
            lam2,
            region: region.clone(),
            eps: eps_osc,
            phase: opts.phase,
            ramp_width: opts.ramp_width.clone(),
            slope_amplitude: None,
        };
        let probe = assemble_oscillation(&spec)?;
        spec.slope_amplitude = Some(probe.potential.profile.max_slope() * amplitude_scale);
        let osc = assemble_oscillation(&spec)?;

        let (lo, hi) = region_bounds(region)?;
        let per = opts.samples_per_axis.max(2);
        let pts = sample_points(&lo, &hi, per);
        let cell = volume / pts.len() as f64;
        let spatial_cell: f64 = (0..n).map(|k| (hi[k] - lo[k]) / per as f64).product();
        let mut cert = PatchCertificates {
            max_div_psi: 0.0,
            membership_ok: true,
            perturbation_ok: true,
            sup_norm: 0.0,
            residual_integral: 0.0,
            residual_budget,
            max_slice_mean: 0.0,
            sup_phi_t: 0.0,
            stability_radius,
            rho,
            passed: false,
        };
        let mut slice_sums = vec![0.0; per];
        let mut scale: f64 = 0.0;
        let mut samples = Vec::with_capacity(pts.len());
        for (idx, z) in pts.iter().enumerate() {
            let w = osc.eval(&z[..n], z[n]);
            scale = scale.max(w.dpsi.iter().chain(&w.dphi).fold(0.0f64, |m, x| m.max(x.abs())));
            cert.max_div_psi = cert.max_div_psi.max(w.div_psi.abs());
            if s_delta_expr(&patched_point(target, &w), delta) >= 0.0 {
                cert.membership_ok = false;
            }
            cert.sup_norm = cert.sup_norm.max(w.sup());
            cert.sup_phi_t = cert.sup_phi_t.max(w.phi_t.abs());
            cert.residual_integral += cell * patched_residual(target, &w);
            slice_sums[idx / per.pow(n as u32)] += w.phi * spatial_cell;
            samples.push(w);
        }
        cert.max_slice_mean = slice_sums.iter().fold(0.0, |m, x| m.max(x.abs()));

        // stability: perturbed base points on a coarser subsample
        let stride = (per / opts.perturbation_samples_per_axis.max(1)).max(1);
        'outer: for _ in 0..opts.perturbations {
            let mut dir: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let dn = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            dir.iter_mut().for_each(|x| *x *= stability_radius / dn);
            let base = ReducedPoint::new(
                (0..n).map(|i| target.p[i] + dir[i]).collect(),
                (0..n).map(|i| target.beta[i] + dir[n + i]).collect(),
            );
            for (idx, w) in samples.iter().enumerate() {
                let mut rem = idx;
                let on_grid = (0..=n).all(|_| {
                    let i = rem % per;
                    rem /= per;
                    i % stride == 0
                });
                if on_grid && s_delta_expr(&patched_point(&base, w), delta) >= 0.0 {
                    cert.perturbation_ok = false;
                    break 'outer;
                }
            }
        }

        cert.passed = cert.max_div_psi <= 1e-10 * scale.max(1.0)
            && cert.membership_ok
            && cert.perturbation_ok
            && cert.sup_norm < rho
            && cert.residual_integral < residual_budget
            && cert.max_slice_mean <= 1e-10
            && cert.sup_phi_t < rho;
        if cert.passed {
            let mut osc = osc;
            osc.certificates = None;
            return Ok(Patch {
                target: target.clone(),
                delta,
                shrink,
                lam_prime,
                oscillation: Some(osc),
                certificates: Some(cert),
            });
        }
        last_detail = format!("{cert:?}");
        if cert.residual_integral >= residual_budget || !cert.perturbation_ok {
            shrink *= 0.5;
        }
        amplitude_scale *= 0.25;
    }
    Err(Error::certificate("patch", last_detail))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Gaussian;

    impl Potential for Gaussian {
        fn jet(&self, x: &[f64], t: f64) -> PotentialJet {
            let r2 = x[0] * x[0] + x[1] * x[1];
            let g = (-(r2) - t * t).exp();
            PotentialJet {
                value: g,
                grad: vec![-2.0 * x[0] * g, -2.0 * x[1] * g],
                hess: vec![
                    (4.0 * x[0] * x[0] - 2.0) * g,
                    4.0 * x[0] * x[1] * g,
                    4.0 * x[0] * x[1] * g,
                    (4.0 * x[1] * x[1] - 2.0) * g,
                ],
                dt: -2.0 * t * g,
                grad_t: vec![4.0 * t * x[0] * g, 4.0 * t * x[1] * g],
            }
        }
    }

    #[test]
    fn psi_is_divergence_free() {
        let w = p_operator(&Gaussian.jet(&[0.3, -0.4], 0.2), &[0.6, 0.8], &[-0.4, 0.3], 0.05);
        assert!(w.div_psi.abs() < 1e-12);
    }
}
