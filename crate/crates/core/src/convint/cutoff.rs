use serde::{Deserialize, Serialize};

use crate::quad::smoothstep5;

/// Tensor-product cutoff on a box: one on the inner box, zero outside the
/// box, with C^2 quintic ramps of width `width[k]` along each axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxCutoff {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub width: Vec<f64>,
}

/// Value, gradient and Hessian of the cutoff at one point.
#[derive(Debug, Clone)]
pub struct CutoffJet {
    pub value: f64,
    pub grad: Vec<f64>,
    /// Row-major `dim x dim`.
    pub hess: Vec<f64>,
}

impl BoxCutoff {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, width: Vec<f64>) -> Self {
        debug_assert!(lo.len() == hi.len() && hi.len() == width.len());
        Self { lo, hi, width }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    fn factor(&self, k: usize, y: f64) -> (f64, f64, f64) {
        let (lo, hi, w) = (self.lo[k], self.hi[k], self.width[k]);
        if y <= lo || y >= hi {
            return (0.0, 0.0, 0.0);
        }
        let up = (y - lo) / w;
        let down = (hi - y) / w;
        if up < 1.0 {
            let (v, d1, d2) = smoothstep5(up);
            return (v, d1 / w, d2 / (w * w));
        }
        if down < 1.0 {
            let (v, d1, d2) = smoothstep5(down);
            return (v, -d1 / w, d2 / (w * w));
        }
        (1.0, 0.0, 0.0)
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        (0..self.dim()).map(|k| self.factor(k, z[k]).0).product()
    }

    pub fn jet(&self, z: &[f64]) -> CutoffJet {
        let d = self.dim();
        let f: Vec<(f64, f64, f64)> = (0..d).map(|k| self.factor(k, z[k])).collect();
        let prod_except = |skip: &[usize]| -> f64 {
            (0..d).filter(|k| !skip.contains(k)).map(|k| f[k].0).product()
        };
        let value = prod_except(&[]);
        let grad: Vec<f64> = (0..d).map(|i| f[i].1 * prod_except(&[i])).collect();
        let mut hess = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                hess[i * d + j] = if i == j {
                    f[i].2 * prod_except(&[i])
                } else {
                    f[i].1 * f[j].1 * prod_except(&[i, j])
                };
            }
        }
        CutoffJet { value, grad, hess }
    }

    /// Volume of the inner box where the cutoff is one.
    pub fn inner_volume(&self) -> f64 {
        (0..self.dim())
            .map(|k| (self.hi[k] - self.lo[k] - 2.0 * self.width[k]).max(0.0))
            .product()
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|k| self.hi[k] - self.lo[k]).product()
    }

    /// Upper bound on `|grad|` over the box.
    pub fn gradient_bound(&self) -> f64 {
        (0..self.dim())
            .map(|k| (1.875 / self.width[k]).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Upper bound on the Frobenius norm of the Hessian.
    pub fn hessian_bound(&self) -> f64 {
        let g: Vec<f64> = self.width.iter().map(|w| 1.875 / w).collect();
        let h: Vec<f64> = self.width.iter().map(|w| 5.774 / (w * w)).collect();
        let mut s = 0.0;
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                let v = if i == j { h[i] } else { g[i] * g[j] };
                s += v * v;
            }
        }
        s.sqrt()
    }
}
