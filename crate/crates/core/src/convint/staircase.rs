//! Compactly supported periodic profiles whose second derivative takes two
//! values `-lam1` and `+lam2` except near the corners of each period.
//!
//! One period of the raw second derivative is `+lam2` on `[0, a)`,
//! `-lam1` on `[a, a + c)` and `+lam2` on `[a + c, P)` with
//! `c = 2 a lam2 / lam1`, so the raw `f'` and `f` vanish at every period
//! boundary. The raw profile is mollified with a quartic kernel of radius `r`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::gauss4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaircaseProfile {
    pub lam1: f64,
    pub lam2: f64,
    /// Window `(k, l)` containing the support.
    pub k: f64,
    pub l: f64,
    pub period: f64,
    pub corner_radius: f64,
    /// Left end of the first period.
    pub start: f64,
    pub periods: u64,
}

/// Values of `f`, `f'`, `f''` at one point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ProfileJet {
    pub f: f64,
    pub d1: f64,
    pub d2: f64,
}

impl StaircaseProfile {
    /// Period `tau min(1, lam1, lam2) / (4 (lam1 + lam2))`.
    pub fn new(lam1: f64, lam2: f64, window: (f64, f64), tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::Domain(format!("tau = {tau} must lie in (0, 1)")));
        }
        check_levels(lam1, lam2)?;
        let period = tau * 1f64.min(lam1).min(lam2) / (4.0 * (lam1 + lam2));
        Self::with_period(lam1, lam2, window, period, tau, 0.5)
    }

    /// Builds the profile with an explicit period. `tau` bounds the measure of
    /// the corner set relative to the window; `phase` in [0, 1] places the
    /// periods inside the spare room of the window.
    pub fn with_period(lam1: f64, lam2: f64, window: (f64, f64), period: f64, tau: f64, phase: f64) -> Result<Self> {
        check_levels(lam1, lam2)?;
        let (k, l) = window;
        if !(l > k) {
            return Err(Error::Domain(format!("empty window ({k}, {l})")));
        }
        let len = l - k;
        let scale = k.abs().max(l.abs()).max(1.0);
        if !(period > 64.0 * f64::EPSILON * scale) || !period.is_finite() {
            return Err(Error::Domain(format!(
                "period {period:e} underflows the representable resolution of the window"
            )));
        }
        let corner_radius = (period / 16.0).min(tau * period / (16.0 * len));
        let usable = len - 2.0 * corner_radius;
        let count = (usable / period).floor();
        if count < 1.0 {
            return Err(Error::Domain(format!("window {len} shorter than one period {period}")));
        }
        if count > 1e15 {
            return Err(Error::Domain(format!("{count:e} periods exceed the supported count")));
        }
        let spare = usable - count * period;
        let start = k + corner_radius + phase.clamp(0.0, 1.0) * spare;
        Ok(Self {
            lam1,
            lam2,
            k,
            l,
            period,
            corner_radius,
            start,
            periods: count as u64,
        })
    }

    /// Length of the first `+lam2` piece.
    pub fn rise(&self) -> f64 {
        0.5 * self.period * self.lam1 / (self.lam1 + self.lam2)
    }

    fn fall(&self) -> f64 {
        2.0 * self.rise() * self.lam2 / self.lam1
    }

    pub fn end(&self) -> f64 {
        self.start + self.periods as f64 * self.period
    }

    /// Raw piecewise quadratic at `s`.
    fn raw(&self, s: f64) -> ProfileJet {
        if s < self.start || s >= self.end() {
            return ProfileJet::default();
        }
        let m = ((s - self.start) / self.period).floor();
        let x = (s - self.start) - m * self.period;
        let (l1, l2) = (self.lam1, self.lam2);
        let a = self.rise();
        let c = self.fall();
        if x < a {
            ProfileJet { f: 0.5 * l2 * x * x, d1: l2 * x, d2: l2 }
        } else if x < a + c {
            let y = x - a;
            ProfileJet {
                f: 0.5 * l2 * a * a + l2 * a * y - 0.5 * l1 * y * y,
                d1: l2 * a - l1 * y,
                d2: -l1,
            }
        } else {
            let y = x - a - c;
            ProfileJet {
                f: 0.5 * l2 * a * a - l2 * a * y + 0.5 * l2 * y * y,
                d1: -l2 * a + l2 * y,
                d2: l2,
            }
        }
    }

    fn kernel(&self, y: f64) -> f64 {
        let r = self.corner_radius;
        let z = y / r;
        if z.abs() >= 1.0 {
            return 0.0;
        }
        15.0 / (16.0 * r) * (1.0 - z * z).powi(2)
    }

    /// Breakpoints of the raw profile inside `(lo, hi)`.
    fn breakpoints(&self, lo: f64, hi: f64) -> Vec<f64> {
        let mut pts = Vec::with_capacity(8);
        let first = ((lo - self.start) / self.period).floor() as i64;
        let last = ((hi - self.start) / self.period).floor() as i64;
        let a = self.rise();
        let c = self.fall();
        for m in first..=last {
            if m < 0 || m as u64 > self.periods {
                continue;
            }
            let base = self.start + m as f64 * self.period;
            for off in [0.0, a, a + c] {
                let p = base + off;
                if p > lo && p < hi && p >= self.start && p <= self.end() {
                    pts.push(p);
                }
            }
        }
        let end = self.end();
        if end > lo && end < hi {
            pts.push(end);
        }
        pts.sort_by(|x, y| x.partial_cmp(y).unwrap());
        pts.dedup();
        pts
    }

    /// Mollified `f`, `f'`, `f''` at `s`.
    pub fn eval(&self, s: f64) -> ProfileJet {
        let r = self.corner_radius;
        if s + r <= self.start || s - r >= self.end() {
            return ProfileJet::default();
        }
        let lo = s - r;
        let hi = s + r;
        let cuts = self.breakpoints(lo, hi);
        if cuts.is_empty() {
            // the raw profile is one quadratic on the kernel support
            let j = self.raw(s);
            let m2 = r * r / 7.0;
            return ProfileJet {
                f: j.f + 0.5 * m2 * j.d2,
                d1: j.d1,
                d2: j.d2,
            };
        }
        let mut edges = Vec::with_capacity(cuts.len() + 2);
        edges.push(lo);
        edges.extend(cuts);
        edges.push(hi);
        let mut out = ProfileJet::default();
        for w in edges.windows(2) {
            let (a, b) = (w[0], w[1]);
            let mid = 0.5 * (a + b);
            // one quadratic piece: sample it at the midpoint and expand
            let piece = self.raw(mid);
            let jet = |t: f64| -> ProfileJet {
                let d = t - mid;
                ProfileJet {
                    f: piece.f + piece.d1 * d + 0.5 * piece.d2 * d * d,
                    d1: piece.d1 + piece.d2 * d,
                    d2: piece.d2,
                }
            };
            out.f += gauss4(|t| self.kernel(s - t) * jet(t).f, a, b);
            out.d1 += gauss4(|t| self.kernel(s - t) * jet(t).d1, a, b);
            out.d2 += gauss4(|t| self.kernel(s - t) * jet(t).d2, a, b);
        }
        out
    }

    /// Largest `|f'|` of the raw profile; the mollified one is no larger.
    pub fn max_slope(&self) -> f64 {
        self.lam2 * self.rise()
    }

    /// Largest `|f|` of the raw profile.
    pub fn max_value(&self) -> f64 {
        0.5 * self.lam2 * self.rise() * self.rise()
    }

    /// Measure of the set in `(k, l)` where `f''` is not one of the two levels.
    pub fn corner_measure(&self) -> f64 {
        let corners = 3.0 * self.periods as f64 + 1.0;
        let support = self.end() - self.start + 2.0 * self.corner_radius;
        let outside = (self.l - self.k) - support;
        2.0 * self.corner_radius * corners + outside.max(0.0)
    }
}

fn check_levels(lam1: f64, lam2: f64) -> Result<()> {
    if !(lam1 > 0.0 && lam2 > 0.0) || !lam1.is_finite() || !lam2.is_finite() {
        return Err(Error::Domain(format!("levels ({lam1}, {lam2}) must be positive")));
    }
    Ok(())
}
