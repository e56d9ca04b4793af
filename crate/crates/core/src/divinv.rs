//! A bounded right inverse of the divergence on boxes.
//!
//! For mean-zero `u` on a box, `right_inverse_static` returns a vector field
//! `v` with `div v = u` and `v . n = 0` on the boundary. The construction
//! peels off one axis at a time: integrate `u` along the last axis, invert
//! the divergence of the result on the remaining axes, spread it with a
//! unit-mass bump, and correct the last component by an antiderivative.

use ndarray::{ArrayD, ArrayViewD, Axis, IxDyn, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::BoxDomain;
use crate::error::{Error, Result};

/// `c (s - a)^4 (b - s)^4` normalised to unit mass on (a, b).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BumpProfile {
    pub a: f64,
    pub b: f64,
}

impl BumpProfile {
    pub fn new(a: f64, b: f64) -> Self {
        Self { a, b }
    }

    pub fn value(&self, s: f64) -> f64 {
        let len = self.b - self.a;
        let t = (s - self.a) / len;
        if !(0.0..=1.0).contains(&t) {
            return 0.0;
        }
        630.0 * (t * (1.0 - t)).powi(4) / len
    }

    /// Mass of the bump on (a, s), exact.
    pub fn cumulative(&self, s: f64) -> f64 {
        let t = ((s - self.a) / (self.b - self.a)).clamp(0.0, 1.0);
        let t5 = t.powi(5);
        t5 * (126.0 + t * (-420.0 + t * (540.0 + t * (-315.0 + 70.0 * t))))
    }

    /// Peak value times the interval length.
    pub fn scaled_peak(&self) -> f64 {
        630.0 / 256.0
    }
}

fn axis_nodes(domain: &BoxDomain, axis: usize, count: usize) -> Result<Vec<f64>> {
    if count < 2 {
        return Err(Error::Domain(format!("axis {axis} needs at least two nodes")));
    }
    Ok(domain.nodes(axis, count))
}

fn cumtrap_axis(u: &ArrayViewD<f64>, axis: usize, h: f64) -> ArrayD<f64> {
    let mut out = u.to_owned();
    for mut lane in out.lanes_mut(Axis(axis)) {
        let mut prev = lane[0];
        let mut acc = 0.0;
        lane[0] = 0.0;
        for i in 1..lane.len() {
            let cur = lane[i];
            acc += 0.5 * h * (prev + cur);
            prev = cur;
            lane[i] = acc;
        }
    }
    out
}

fn trapz_axis(u: &ArrayViewD<f64>, axis: usize, h: f64) -> ArrayD<f64> {
    u.map_axis(Axis(axis), |lane| {
        let n = lane.len();
        let inner: f64 = lane.iter().sum();
        h * (inner - 0.5 * (lane[0] + lane[n - 1]))
    })
}

/// Trapezoid integral over the whole box.
pub fn box_integral(u: &ArrayViewD<f64>, domain: &BoxDomain) -> f64 {
    let mut cur = u.to_owned();
    for axis in (0..u.ndim()).rev() {
        let n = cur.shape()[axis];
        let h = domain.length(axis) / (n - 1) as f64;
        cur = trapz_axis(&cur.view(), axis, h);
    }
    cur.iter().sum()
}

fn right_inverse_rec(u: &ArrayViewD<f64>, domain: &BoxDomain) -> Result<Vec<ArrayD<f64>>> {
    let n = u.ndim();
    let last = n - 1;
    let m = u.shape()[last];
    let xs = axis_nodes(domain, last, m)?;
    let h = domain.length(last) / (m - 1) as f64;
    if n == 1 {
        return Ok(vec![cumtrap_axis(u, 0, h)]);
    }
    let reduced = trapz_axis(u, last, h);
    let sub_domain = BoxDomain {
        intervals: domain.intervals[..last].to_vec(),
        time: None,
    };
    let z = right_inverse_rec(&reduced.view(), &sub_domain)?;
    let (a, b) = domain.intervals[last];
    let bump = BumpProfile::new(a, b);
    let mut shape = vec![1; n];
    shape[last] = m;
    let rho = ArrayD::from_shape_vec(IxDyn(&shape), xs.iter().map(|&s| bump.value(s)).collect())
        .map_err(|e| Error::Numerical(e.to_string()))?;
    let cum = ArrayD::from_shape_vec(IxDyn(&shape), xs.iter().map(|&s| bump.cumulative(s)).collect())
        .map_err(|e| Error::Numerical(e.to_string()))?;

    let mut out = Vec::with_capacity(n);
    for zk in z {
        out.push(&zk.insert_axis(Axis(last)) * &rho);
    }
    let spread = &reduced.insert_axis(Axis(last)) * &cum;
    out.push(cumtrap_axis(u, last, h) - spread);
    Ok(out)
}

/// Right inverse of the divergence for node samples `u` on `domain`.
///
/// Sample counts per axis come from `u.shape()`; nodes include both ends.
/// The trace of `v` on the far faces vanishes only when `u` has zero mean.
pub fn right_inverse_static(u: &ArrayD<f64>, domain: &BoxDomain) -> Result<Vec<ArrayD<f64>>> {
    check_shape(u, domain)?;
    right_inverse_rec(&u.view(), domain)
}

fn check_shape(u: &ArrayD<f64>, domain: &BoxDomain) -> Result<()> {
    if u.ndim() != domain.dim() {
        return Err(Error::Domain(format!(
            "field has {} axes but box has {}",
            u.ndim(),
            domain.dim()
        )));
    }
    if u.shape().iter().any(|&k| k < 2) {
        return Err(Error::Domain("each axis needs at least two nodes".into()));
    }
    if u.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite input".into()));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SpacetimeInverse {
    pub components: Vec<ArrayD<f64>>,
    /// Largest absolute spatial mean over the time slices.
    pub max_slice_mean: f64,
    pub mean_warning: bool,
}

/// Applies the static inverse slice by slice; axis 0 of `u` is time.
///
/// Slices with a nonzero mean still get an inverse whose divergence is `u`
/// but whose boundary trace is not zero; that case is flagged.
pub fn right_inverse_spacetime(u: &ArrayD<f64>, domain: &BoxDomain) -> Result<SpacetimeInverse> {
    if u.ndim() != domain.dim() + 1 {
        return Err(Error::Domain("expected a time axis followed by the spatial axes".into()));
    }
    let slices: Vec<ArrayD<f64>> = u.axis_iter(Axis(0)).map(|s| s.to_owned()).collect();
    for s in &slices {
        check_shape(s, domain)?;
    }
    let results: Vec<Result<(Vec<ArrayD<f64>>, f64, f64)>> = slices
        .par_iter()
        .map(|s| {
            let mean = box_integral(&s.view(), domain) / domain.volume();
            let scale = s.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            Ok((right_inverse_rec(&s.view(), domain)?, mean, scale))
        })
        .collect();
    let n = domain.dim();
    let mut per_comp: Vec<Vec<ArrayD<f64>>> = vec![Vec::with_capacity(slices.len()); n];
    let mut max_mean: f64 = 0.0;
    let mut warn = false;
    for r in results {
        let (comps, mean, scale) = r?;
        max_mean = max_mean.max(mean.abs());
        if mean.abs() > 1e-10 * scale.max(f64::MIN_POSITIVE) {
            warn = true;
        }
        for (k, c) in comps.into_iter().enumerate() {
            per_comp[k].push(c);
        }
    }
    let mut components = Vec::with_capacity(n);
    for stack in per_comp {
        let views: Vec<_> = stack.iter().map(|a| a.view()).collect();
        components.push(ndarray::stack(Axis(0), &views).map_err(|e| Error::Numerical(e.to_string()))?);
    }
    Ok(SpacetimeInverse {
        components,
        max_slice_mean: max_mean,
        mean_warning: warn,
    })
}

/// Divergence by central differences inside and one-sided differences on
/// the boundary nodes.
pub fn discrete_divergence(v: &[ArrayD<f64>], domain: &BoxDomain) -> ArrayD<f64> {
    let mut out = ArrayD::zeros(v[0].raw_dim());
    for (k, comp) in v.iter().enumerate() {
        let m = comp.shape()[k];
        let h = domain.length(k) / (m - 1) as f64;
        Zip::from(out.lanes_mut(Axis(k)))
            .and(comp.lanes(Axis(k)))
            .for_each(|mut o, c| {
                for i in 0..m {
                    let d = if i == 0 {
                        (c[1] - c[0]) / h
                    } else if i == m - 1 {
                        (c[m - 1] - c[m - 2]) / h
                    } else {
                        (c[i + 1] - c[i - 1]) / (2.0 * h)
                    };
                    o[i] += d;
                }
            });
    }
    out
}

/// Random smooth mean-zero field sampled on `resolution` nodes per axis.
pub fn random_smooth_field(domain: &BoxDomain, resolution: usize, rng: &mut impl Rng) -> ArrayD<f64> {
    let n = domain.dim();
    let shape = vec![resolution; n];
    let coords: Vec<Vec<f64>> = (0..n).map(|k| domain.nodes(k, resolution)).collect();
    let kind = rng.gen_range(0..3);
    let modes: Vec<(f64, Vec<(f64, f64)>)> = (0..4)
        .map(|_| {
            let amp = rng.gen_range(-1.0..1.0);
            let per_axis = (0..n)
                .map(|_| (rng.gen_range(0..4) as f64, rng.gen_range(0.0..std::f64::consts::TAU)))
                .collect();
            (amp, per_axis)
        })
        .collect();
    let step_axis = rng.gen_range(0..n);
    let step_pos = rng.gen_range(0.2..0.8);
    let step_width = rng.gen_range(0.02..0.2);
    let mut u = ArrayD::from_shape_fn(IxDyn(&shape), |idx| {
        let xhat: Vec<f64> = (0..n)
            .map(|k| (coords[k][idx[k]] - domain.intervals[k].0) / domain.length(k))
            .collect();
        match kind {
            0 => modes
                .iter()
                .map(|(a, ax)| a * ax.iter().zip(&xhat).map(|((m, ph), x)| (m * std::f64::consts::PI * x + ph).cos()).product::<f64>())
                .sum(),
            1 => ((xhat[step_axis] - step_pos) / step_width).tanh(),
            _ => 1.0,
        }
    });
    let mean = box_integral(&u.view(), domain) / domain.volume();
    u.mapv_inplace(|x| x - mean);
    if kind == 2 {
        // a constant has no mean-zero part; use a signed half-box field instead
        u = ArrayD::from_shape_fn(IxDyn(&shape), |idx| {
            let x = (coords[step_axis][idx[step_axis]] - domain.intervals[step_axis].0) / domain.length(step_axis);
            (std::f64::consts::PI * x).cos()
        });
        let mean = box_integral(&u.view(), domain) / domain.volume();
        u.mapv_inplace(|x| x - mean);
    }
    u
}

fn sup(a: &ArrayD<f64>) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Ratio `|R u| / (sum |J_k| |u|)` in the sup norm for one input.
pub fn inverse_ratio(u: &ArrayD<f64>, domain: &BoxDomain) -> Result<f64> {
    let v = right_inverse_static(u, domain)?;
    let num = v.iter().map(sup).fold(0.0, f64::max);
    Ok(num / (domain.side_sum() * sup(u)))
}

/// Empirical sup of `inverse_ratio` over random smooth inputs.
pub fn measure_inverse_constant(domain: &BoxDomain, trials: usize, seed: u64, resolution: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: f64 = 0.0;
    for _ in 0..trials {
        let u = random_smooth_field(domain, resolution, &mut rng);
        if sup(&u) < 1e-12 {
            continue;
        }
        best = best.max(inverse_ratio(&u, domain)?);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;

    #[test]
    fn bump_has_unit_mass() {
        let b = BumpProfile::new(0.2, 1.7);
        assert!((b.cumulative(1.7) - 1.0).abs() < 1e-14);
        assert_eq!(b.cumulative(0.2), 0.0);
        let s = crate::quad::adaptive_simpson(&|x| b.value(x), 0.2, 1.7, 1e-13);
        assert!((s - 1.0).abs() < 1e-10);
        let mid = crate::quad::adaptive_simpson(&|x| b.value(x), 0.2, 0.9, 1e-13);
        assert!((mid - b.cumulative(0.9)).abs() < 1e-10);
    }

    #[test]
    fn one_dimensional_inverse_is_antiderivative() {
        let d = BoxDomain::unit(1);
        let x = d.nodes(0, 101);
        let u = Array1::from_iter(x.iter().map(|&s| (2.0 * std::f64::consts::PI * s).sin())).into_dyn();
        let v = right_inverse_static(&u, &d).unwrap();
        for (i, &s) in x.iter().enumerate() {
            let exact = (1.0 - (2.0 * std::f64::consts::PI * s).cos()) / (2.0 * std::f64::consts::PI);
            assert!((v[0][[i]] - exact).abs() < 1e-3);
        }
        assert!(v[0][[100]].abs() < 1e-14);
    }

    #[test]
    fn constant_on_longer_interval() {
        let d = BoxDomain::new(vec![(0.0, 2.0)]).unwrap();
        let u = ArrayD::from_elem(IxDyn(&[21]), 1.0);
        let v = right_inverse_static(&u, &d).unwrap();
        for (i, x) in d.nodes(0, 21).iter().enumerate() {
            assert!((v[0][[i]] - x).abs() < 1e-14);
        }
    }
}
