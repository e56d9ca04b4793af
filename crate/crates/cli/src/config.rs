use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cvxint::field::GridSpec;
use cvxint::flux::{build_profile, build_profile_with, m_bounds, pm_rho, FluxProfile};
use cvxint::io::read_initial;
use cvxint::{Error, Result};

/// Initial datum catalog.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialDatum {
    /// `amplitude * cos(mode pi x_1)`.
    Cosine { amplitude: f64, mode: u32 },
    /// `amplitude * cos(m_1 pi x_1) cos(m_2 pi x_2)`; two dimensions only.
    CosineProduct { amplitude: f64, modes: [u32; 2] },
    /// A one-slice field file, resolved against the config's directory.
    File { path: PathBuf },
}

fn default_lambda() -> f64 {
    0.5
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub dim: usize,
    pub initial: InitialDatum,
    /// Gradient bound `M` of the initial datum.
    pub m: f64,
    #[serde(default = "default_lambda")]
    pub lambda_slack: f64,
    /// Overrides the profile's `delta`; `Lambda` is then `M + lambda/2`.
    #[serde(default)]
    pub delta: Option<f64>,
    pub nx: usize,
    pub nt: usize,
    pub t_final: f64,
    /// `(eps_j, eta_j)` pairs.
    pub schedule: Vec<(f64, f64)>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default = "default_true")]
    pub write_fields: bool,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: RunConfig = serde_json::from_str(&text)?;
        if let InitialDatum::File { path: p } = &mut cfg.initial {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    /// Checks every module precondition that can be checked without compute.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.dim != 1 && self.dim != 2 {
            return bad(format!("dim must be 1 or 2, got {}", self.dim));
        }
        if !(self.m > 0.0 && self.m.is_finite()) {
            return bad(format!("M = {} must be positive", self.m));
        }
        if self.m >= 1.0 && !(self.lambda_slack > 0.0) {
            return bad(format!("lambda_slack = {} must be positive", self.lambda_slack));
        }
        if let Some(d) = self.delta {
            if !(d > 0.0 && d < 0.5) {
                return bad(format!("delta = {d} must lie in (0, 1/2)"));
            }
            let (_, m_plus) = m_bounds(d)?;
            if self.m.max(1.0) >= m_plus {
                return bad(format!("delta = {d} leaves no room above M: m_plus = {m_plus}"));
            }
        }
        if self.nx < 8 || self.nt < 4 {
            return bad(format!("grid {}x{} too small (nx >= 8, nt >= 4)", self.nx, self.nt));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return bad(format!("t_final = {} must be positive", self.t_final));
        }
        if self.schedule.is_empty() {
            return bad("schedule is empty".into());
        }
        for (i, &(e, h)) in self.schedule.iter().enumerate() {
            if !(e > 0.0 && h > 0.0) {
                return bad(format!("schedule entry {i} must be positive"));
            }
        }
        if self.schedule.windows(2).any(|w| w[1].0 > w[0].0) {
            return bad("schedule eps must be non-increasing".into());
        }
        match &self.initial {
            InitialDatum::Cosine { mode, .. } if *mode == 0 => bad("cosine mode must be positive".into()),
            InitialDatum::CosineProduct { .. } if self.dim != 2 => bad("cosine_product needs dim = 2".into()),
            InitialDatum::File { path } if !path.exists() => bad(format!("{} does not exist", path.display())),
            _ => Ok(()),
        }
    }

    pub fn profile(&self) -> Result<FluxProfile> {
        match self.delta {
            None => build_profile(self.m, self.lambda_slack, self.dim),
            Some(d) => {
                let big = if self.m < 1.0 {
                    let (_, m_plus) = m_bounds(d)?;
                    0.5 * (1.0 + m_plus)
                } else {
                    self.m + 0.5 * self.lambda_slack
                };
                if pm_rho(big) <= d {
                    return Err(Error::Config(format!("delta = {d} is above rho(Lambda)")));
                }
                build_profile_with(self.m, self.lambda_slack, self.dim, d, big)
            }
        }
    }

    pub fn grid(&self, profile: &FluxProfile) -> Result<GridSpec> {
        GridSpec::with_auto_substeps(
            cvxint::domain::BoxDomain::unit(self.dim),
            self.t_final,
            self.nx,
            self.nt,
            profile.theta_upper,
        )
    }

    /// Samples the initial datum at the spatial nodes of `grid`.
    pub fn initial_values(&self, grid: &GridSpec) -> Result<Vec<f64>> {
        let ns = grid.n_space();
        match &self.initial {
            InitialDatum::Cosine { amplitude, mode } => Ok((0..ns)
                .map(|s| amplitude * (*mode as f64 * PI * grid.position(s)[0]).cos())
                .collect()),
            InitialDatum::CosineProduct { amplitude, modes } => Ok((0..ns)
                .map(|s| {
                    let x = grid.position(s);
                    amplitude * (modes[0] as f64 * PI * x[0]).cos() * (modes[1] as f64 * PI * x[1]).cos()
                })
                .collect()),
            InitialDatum::File { path } => {
                let (h, data) = read_initial(path)?;
                if h.dims as usize != self.dim || h.nx as usize != self.nx {
                    return Err(Error::Config(format!(
                        "{} holds a {}-dimensional grid with {} nodes per axis",
                        path.display(),
                        h.dims,
                        h.nx
                    )));
                }
                Ok(data)
            }
        }
    }
}
