//! The Perona-Malik nonlinearity and the uniformly parabolic flux that
//! agrees with it on small gradients.
//!
//! `rho(s) = s / (1 + s^2)` is increasing on [0, 1] and decreasing after.
//! The modified profile `rho_star` coincides with `rho` up to `m_minus`
//! and keeps a slope bounded below by `theta` afterwards, so the flux
//! `A(p) = rho_star(|p|) p / |p|` is uniformly elliptic.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{adaptive_simpson, smoothstep7};

const TABLE_KNOTS: usize = 4096;
const MAX_RETRIES: usize = 6;

pub fn pm_rho(s: f64) -> f64 {
    s / (1.0 + s * s)
}

pub fn pm_rho_prime(s: f64) -> f64 {
    let d = 1.0 + s * s;
    (1.0 - s * s) / (d * d)
}

/// `sigma(p) = p / (1 + |p|^2)` written into `out`.
pub fn sigma_into(p: &[f64], out: &mut [f64]) {
    let s: f64 = p.iter().map(|x| x * x).sum();
    let f = 1.0 / (1.0 + s);
    for (o, x) in out.iter_mut().zip(p) {
        *o = f * x;
    }
}

pub fn sigma(p: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p.len()];
    sigma_into(p, &mut out);
    out
}

/// Roots `m_minus < 1 < m_plus` of `rho(m) = delta`.
pub fn m_bounds(delta: f64) -> Result<(f64, f64)> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(Error::Domain(format!("delta = {delta} must lie in (0, 1/2)")));
    }
    let root = (1.0 - 4.0 * delta * delta).sqrt();
    // the small root is written without cancellation
    let m_minus = 2.0 * delta / (1.0 + root);
    let m_plus = (1.0 + root) / (2.0 * delta);
    for m in [m_minus, m_plus] {
        if (pm_rho(m) - delta).abs() > 1e-12 {
            return Err(Error::Numerical(format!(
                "root check failed for delta = {delta}: rho({m}) = {}",
                pm_rho(m)
            )));
        }
    }
    Ok((m_minus, m_plus))
}

/// Outcome of the sampled invariant checks on a profile.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileValidation {
    pub max_agreement_error: f64,
    pub min_gap_below_pm: f64,
    pub min_slope: f64,
    pub max_slope: f64,
    pub monotone: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FluxProfile {
    pub dim: usize,
    pub m: f64,
    pub lambda_slack: f64,
    pub delta: f64,
    /// Right end of the window where `rho_star < rho` is enforced.
    pub big_lambda: f64,
    pub m_minus: f64,
    pub m_plus: f64,
    pub theta: f64,
    pub theta_upper: f64,
    pub blend_width: f64,
    pub retries: usize,
    /// `rho_star` at uniformly spaced knots on [m_minus, m_minus + blend_width].
    table: Vec<f64>,
}

/// Picks `delta` and `Lambda` from the gradient bound `m` and slack `lambda_slack`,
/// then constructs and validates the profile.
pub fn build_profile(m: f64, lambda_slack: f64, dim: usize) -> Result<FluxProfile> {
    if !(m > 0.0) || !m.is_finite() {
        return Err(Error::Domain(format!("gradient bound M = {m} must be positive")));
    }
    if dim == 0 {
        return Err(Error::Domain("dimension must be at least 1".into()));
    }
    let (delta, big_lambda) = if m < 1.0 {
        let delta = 0.9 * m / (1.0 + m * m);
        let (_, m_plus) = m_bounds(delta)?;
        (delta, 0.5 * (1.0 + m_plus))
    } else {
        if !(lambda_slack > 0.0) {
            return Err(Error::Domain(format!(
                "slack lambda = {lambda_slack} must be positive when M >= 1"
            )));
        }
        let top = m + lambda_slack;
        (pm_rho(top), m + 0.5 * lambda_slack)
    };
    build_profile_with(m, lambda_slack, dim, delta, big_lambda)
}

/// Constructs the profile for explicit `delta` and `Lambda`.
pub fn build_profile_with(
    m: f64,
    lambda_slack: f64,
    dim: usize,
    delta: f64,
    big_lambda: f64,
) -> Result<FluxProfile> {
    let (m_minus, m_plus) = m_bounds(delta)?;
    if !(big_lambda > m.max(1.0) && big_lambda < m_plus) {
        return Err(Error::ProfileConstruction(format!(
            "Lambda = {big_lambda} outside (max(1, M), m_plus) = ({}, {m_plus})",
            m.max(1.0)
        )));
    }
    let budget = pm_rho(big_lambda) - delta;
    if !(budget > 0.0) {
        return Err(Error::ProfileConstruction(format!(
            "rho(Lambda) - delta = {budget} is not positive"
        )));
    }
    let theta = (budget / (4.0 * (big_lambda - m_minus))).min(0.5 * pm_rho_prime(1.0 / big_lambda));
    let s_theta = slope_crossing(m_minus, theta);
    let mut width = (budget / (2.0 * pm_rho_prime(m_minus))).min(s_theta - m_minus);

    let mut last_failure = String::new();
    for retries in 0..=MAX_RETRIES {
        let mut profile = FluxProfile {
            dim,
            m,
            lambda_slack,
            delta,
            big_lambda,
            m_minus,
            m_plus,
            theta,
            theta_upper: 1.0,
            blend_width: width,
            retries,
            table: Vec::new(),
        };
        profile.fill_table();
        let report = profile.validate(4096);
        if report.passed {
            return Ok(profile);
        }
        last_failure = format!("{report:?}");
        width *= 0.5;
    }
    Err(Error::ProfileConstruction(format!(
        "validation failed after {MAX_RETRIES} retries: {last_failure}"
    )))
}

/// Point in (m_minus, 1) where `rho'` falls to `theta`.
fn slope_crossing(m_minus: f64, theta: f64) -> f64 {
    let (mut lo, mut hi) = (m_minus, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if pm_rho_prime(mid) > theta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

impl FluxProfile {
    fn fill_table(&mut self) {
        let h = self.blend_width / (TABLE_KNOTS - 1) as f64;
        let mut table = Vec::with_capacity(TABLE_KNOTS);
        let mut acc = self.delta;
        table.push(acc);
        for i in 1..TABLE_KNOTS {
            let a = self.m_minus + (i - 1) as f64 * h;
            let g = |s: f64| self.slope(s);
            acc += adaptive_simpson(&g, a, a + h, 1e-15);
            table.push(acc);
        }
        self.table = table;
    }

    fn blend_end(&self) -> f64 {
        self.m_minus + self.blend_width
    }

    /// Derivative of `rho_star`.
    pub fn slope(&self, s: f64) -> f64 {
        let s = s.abs();
        if s <= self.m_minus {
            return pm_rho_prime(s);
        }
        let x = (s - self.m_minus) / self.blend_width;
        if x >= 1.0 {
            return self.theta;
        }
        let w = 1.0 - smoothstep7(x);
        self.theta + w * (pm_rho_prime(s) - self.theta)
    }

    /// The modified profile, odd in `s`.
    pub fn rho_star(&self, s: f64) -> f64 {
        if s < 0.0 {
            return -self.rho_star(-s);
        }
        if s <= self.m_minus {
            return pm_rho(s);
        }
        let end = self.blend_end();
        if s >= end {
            return self.table[TABLE_KNOTS - 1] + self.theta * (s - end);
        }
        let h = self.blend_width / (TABLE_KNOTS - 1) as f64;
        let pos = (s - self.m_minus) / h;
        let i = (pos.floor() as usize).min(TABLE_KNOTS - 2);
        let t = pos - i as f64;
        let s0 = self.m_minus + i as f64 * h;
        let (y0, y1) = (self.table[i], self.table[i + 1]);
        let (d0, d1) = (self.slope(s0) * h, self.slope(s0 + h) * h);
        // cubic Hermite
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * d0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * d1
    }

    /// `f(s) = rho_star(sqrt s) / sqrt s`, so that `A(p) = f(|p|^2) p`.
    pub fn f(&self, s: f64) -> f64 {
        let r = s.max(0.0).sqrt();
        if r <= self.m_minus {
            return 1.0 / (1.0 + s);
        }
        self.rho_star(r) / r
    }

    pub fn f_prime(&self, s: f64) -> f64 {
        let r = s.max(0.0).sqrt();
        if r <= self.m_minus {
            let d = 1.0 + s;
            return -1.0 / (d * d);
        }
        (self.slope(r) * r - self.rho_star(r)) / (2.0 * r * r * r)
    }

    pub fn flux_into(&self, p: &[f64], out: &mut [f64]) {
        let s: f64 = p.iter().map(|x| x * x).sum();
        let f = self.f(s);
        for (o, x) in out.iter_mut().zip(p) {
            *o = f * x;
        }
    }

    pub fn flux(&self, p: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; p.len()];
        self.flux_into(p, &mut out);
        out
    }

    /// `dA^i/dp_j = f delta_ij + 2 f' p_i p_j`.
    pub fn jacobian(&self, p: &[f64]) -> DMatrix<f64> {
        let s: f64 = p.iter().map(|x| x * x).sum();
        let f = self.f(s);
        let fp = self.f_prime(s);
        let n = p.len();
        DMatrix::from_fn(n, n, |i, j| {
            let diag = if i == j { f } else { 0.0 };
            diag + 2.0 * fp * p[i] * p[j]
        })
    }

    /// Samples the defining invariants on `samples` points per window.
    pub fn validate(&self, samples: usize) -> ProfileValidation {
        let samples = samples.max(16);
        let mut agree: f64 = 0.0;
        for i in 0..=samples {
            let s = self.m_minus * i as f64 / samples as f64;
            agree = agree.max((self.rho_star(s) - pm_rho(s)).abs());
        }
        let mut gap = f64::INFINITY;
        for i in 1..=samples {
            let s = self.m_minus + (self.big_lambda - self.m_minus) * i as f64 / samples as f64;
            gap = gap.min(pm_rho(s) - self.rho_star(s));
        }
        let top = 2.0 * self.m_plus;
        let mut min_slope = f64::INFINITY;
        let mut max_slope = f64::NEG_INFINITY;
        let mut monotone = true;
        let mut prev = self.rho_star(0.0);
        for i in 1..=4 * samples {
            let r = top * i as f64 / (4 * samples) as f64;
            let s = r * r;
            // f + 2 s f' is the radial slope of the flux
            let radial = self.f(s) + 2.0 * s * self.f_prime(s);
            min_slope = min_slope.min(radial);
            max_slope = max_slope.max(radial);
            let cur = self.rho_star(r);
            if cur <= prev {
                monotone = false;
            }
            prev = cur;
        }
        let slack = 1e-10;
        let passed = agree <= 1e-12
            && gap > 0.0
            && min_slope >= self.theta - slack
            && max_slope <= self.theta_upper + slack
            && monotone;
        ProfileValidation {
            max_agreement_error: agree,
            min_gap_below_pm: gap,
            min_slope,
            max_slope,
            monotone,
            passed,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rho_values() {
        assert_eq!(pm_rho(0.0), 0.0);
        assert!((pm_rho(1.0) - 0.5).abs() < 1e-15);
        assert!((pm_rho(2.0) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn bounds_for_small_delta() {
        let (lo, hi) = m_bounds(0.1).unwrap();
        assert!((pm_rho(lo) - 0.1).abs() < 1e-12);
        assert!((pm_rho(hi) - 0.1).abs() < 1e-12);
        assert!(lo < 1.0 && hi > 1.0);
        assert!((lo * hi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bounds_reject_out_of_range() {
        assert!(matches!(m_bounds(0.5), Err(Error::Domain(_))));
        assert!(matches!(m_bounds(0.0), Err(Error::Domain(_))));
        assert!(matches!(m_bounds(-0.2), Err(Error::Domain(_))));
    }

    #[test]
    fn profile_agrees_below_m_minus() {
        let p = build_profile(2.0, 0.5, 1).unwrap();
        assert!((p.delta - 2.5 / 7.25).abs() < 1e-15);
        assert!((p.m_plus - 2.5).abs() < 1e-12);
        assert!((p.m_minus - 0.4).abs() < 1e-12);
        for i in 0..100 {
            let s = 0.4 * i as f64 / 100.0;
            assert!((p.rho_star(s) - pm_rho(s)).abs() < 1e-14);
        }
        assert!(p.rho_star(p.big_lambda) < pm_rho(p.big_lambda));
    }

    #[test]
    fn hermite_table_matches_direct_integral() {
        let p = build_profile(2.0, 0.5, 1).unwrap();
        let s = p.m_minus + 0.37 * p.blend_width;
        let direct = p.delta + adaptive_simpson(&|x| p.slope(x), p.m_minus, s, 1e-14);
        assert!((p.rho_star(s) - direct).abs() < 1e-12);
    }

    #[test]
    fn subcritical_case_uses_scaled_delta() {
        let p = build_profile(0.5, 0.5, 2).unwrap();
        assert!((p.delta - 0.9 * 0.5 / 1.25).abs() < 1e-15);
        assert!(p.big_lambda > 1.0 && p.big_lambda < p.m_plus);
    }

    #[test]
    fn json_round_trip() {
        let p = build_profile(1.5, 0.3, 2).unwrap();
        let back = FluxProfile::from_json(&p.to_json().unwrap()).unwrap();
        for s in [0.1, 0.9, 1.7, 4.0] {
            assert_eq!(p.rho_star(s), back.rho_star(s));
        }
    }
}
