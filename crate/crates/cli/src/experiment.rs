use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;

use cvxint::field::GridSpec;
use cvxint::flux::{FluxProfile, ProfileValidation};
use cvxint::io::{write_scalar, write_vector};
use cvxint::parabolic::{build_boundary_datum, level_diagnostics, DatumReport};
use cvxint::stitcher::{iterate, test_catalog, weak_form_residual, AdmissiblePair, StepOptions, StepReport};
use cvxint::{Error, Result};

use crate::config::RunConfig;

/// A violated certificate, written to `failure.json`.
#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    pub certificate: String,
    pub step: Option<usize>,
    pub detail: String,
}

impl Failure {
    fn new(certificate: &str, step: Option<usize>, detail: impl Into<String>) -> Self {
        Self {
            certificate: certificate.to_string(),
            step,
            detail: detail.into(),
        }
    }

    fn from_error(e: &Error) -> Self {
        let name = match e {
            Error::Certificate { name, .. } => name.as_str(),
            Error::BudgetInfeasible(_) => "budget",
            Error::Config(_) => "config",
            Error::ProfileConstruction(_) => "profile",
            Error::Stability(_) => "stability",
            _ => "error",
        };
        Self::new(name, None, e.to_string())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProfileSummary {
    pub delta: f64,
    pub big_lambda: f64,
    pub m_minus: f64,
    pub m_plus: f64,
    pub theta: f64,
    pub theta_upper: f64,
    pub blend_width: f64,
    pub retries: usize,
    pub validation: ProfileValidation,
}

impl ProfileSummary {
    fn new(p: &FluxProfile) -> Self {
        Self {
            delta: p.delta,
            big_lambda: p.big_lambda,
            m_minus: p.m_minus,
            m_plus: p.m_plus,
            theta: p.theta,
            theta_upper: p.theta_upper,
            blend_width: p.blend_width,
            retries: p.retries,
            validation: p.validate(2048),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct WeakSummary {
    pub iteration: usize,
    pub max_abs: f64,
    pub bound: f64,
    pub within_bound: bool,
    pub divergence_identity: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub config: RunConfig,
    pub out_dir: PathBuf,
    pub profile: Option<ProfileSummary>,
    pub grid: Option<GridSpec>,
    pub datum: Option<DatumReport>,
    pub measured_m: Option<f64>,
    pub mu: Option<f64>,
    pub inverse_constant: Option<f64>,
    pub steps: Vec<StepReport>,
    pub weak_form: Vec<WeakSummary>,
    pub finest_eps: Option<f64>,
    pub stopped_early: Option<String>,
    pub failures: Vec<Failure>,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: Manifest,
    /// The datum pair followed by one pair per completed step.
    pub pairs: Vec<AdmissiblePair>,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.manifest.passed
    }
}

/// Profile, datum and iteration; writes the manifest, CSV diagnostics and
/// field dumps to `out_dir`, plus `failure.json` when a certificate fails.
pub fn run_experiment(config: &RunConfig, out_dir: &Path) -> Result<RunOutcome> {
    config.validate()?;
    fs::create_dir_all(out_dir)?;
    let mut manifest = Manifest {
        config: config.clone(),
        out_dir: out_dir.to_path_buf(),
        profile: None,
        grid: None,
        datum: None,
        measured_m: None,
        mu: None,
        inverse_constant: None,
        steps: Vec::new(),
        weak_form: Vec::new(),
        finest_eps: None,
        stopped_early: None,
        failures: Vec::new(),
        passed: false,
    };
    let pairs = match execute(config, out_dir, &mut manifest) {
        Ok(p) => p,
        Err(e) => {
            manifest.failures.push(Failure::from_error(&e));
            Vec::new()
        }
    };
    manifest.passed = manifest.failures.is_empty();
    fs::write(out_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    let failure = out_dir.join("failure.json");
    if manifest.passed {
        if failure.exists() {
            fs::remove_file(&failure)?;
        }
    } else {
        fs::write(&failure, serde_json::to_string_pretty(&manifest.failures)?)?;
    }
    Ok(RunOutcome { manifest, pairs })
}

fn execute(config: &RunConfig, out_dir: &Path, manifest: &mut Manifest) -> Result<Vec<AdmissiblePair>> {
    let profile = config.profile()?;
    let summary = ProfileSummary::new(&profile);
    if !summary.validation.passed {
        manifest
            .failures
            .push(Failure::new("profile", None, format!("{:?}", summary.validation)));
    }
    manifest.profile = Some(summary);
    let grid = config.grid(&profile)?;
    manifest.grid = Some(grid.clone());
    let u0 = config.initial_values(&grid)?;
    let datum = Arc::new(build_boundary_datum(&u0, &profile, &grid)?);
    manifest.datum = Some(datum.report.clone());
    manifest.measured_m = Some(datum.m);
    manifest.mu = Some(datum.mu);
    if datum.m > config.m * (1.0 + 1e-6) {
        manifest.failures.push(Failure::new(
            "initial-gradient",
            None,
            format!("measured |Du0| = {} exceeds M = {}", datum.m, config.m),
        ));
    }

    let mut w = csv::Writer::from_path(out_dir.join("parabolic_steps.csv"))?;
    for row in level_diagnostics(&datum.u) {
        w.serialize(row)?;
    }
    w.flush()?;

    let options = StepOptions::measured(config.dim, config.seed)?;
    manifest.inverse_constant = Some(options.inverse_constant);
    let run = iterate(datum.clone(), &config.schedule, config.seed, &options)?;
    manifest.steps = run.reports.clone();
    manifest.finest_eps = run.finest_eps;
    if let Some(reason) = &run.stopped_early {
        manifest.failures.push(Failure::new("budget", Some(run.reports.len() + 1), reason.clone()));
    }

    let catalog = test_catalog(config.dim);
    let tol = 10.0 * grid.h_max();
    let mut w = csv::Writer::from_path(out_dir.join("diagnostics.csv"))?;
    w.write_record([
        "iteration",
        "eps",
        "eta",
        "residual",
        "sup_increment",
        "membership_fraction",
        "max_gradient",
        "max_ut",
        "boundary_trace_change",
        "weak_residual",
        "weak_bound",
        "patches",
    ])?;
    for (j, pair) in run.pairs.iter().enumerate() {
        let weak = weak_form_residual(pair, &catalog);
        let d = pair.diagnostics();
        let (eps, eta, inc) = match j.checked_sub(1).map(|i| &run.reports[i]) {
            Some(r) => (r.eps, r.eta, r.sup_increment),
            None => (f64::NAN, f64::NAN, 0.0),
        };
        w.write_record(&[
            j.to_string(),
            eps.to_string(),
            eta.to_string(),
            d.residual.to_string(),
            inc.to_string(),
            d.membership_fraction.to_string(),
            d.max_gradient.to_string(),
            d.max_ut.to_string(),
            d.boundary_trace_change.to_string(),
            weak.max_abs.to_string(),
            weak.bound.to_string(),
            d.patches.to_string(),
        ])?;
        if j > 0 {
            check_step(&mut manifest.failures, j, &run.reports[j - 1], pair, profile.m_plus + tol);
            if !weak.within_bound {
                manifest.failures.push(Failure::new(
                    "weak-form",
                    Some(j),
                    format!("{:e} above {:e}", weak.max_abs, weak.bound),
                ));
            }
        }
        manifest.weak_form.push(WeakSummary {
            iteration: j,
            max_abs: weak.max_abs,
            bound: weak.bound,
            within_bound: weak.within_bound,
            divergence_identity: weak.divergence_identity,
        });
        if config.write_fields {
            write_scalar(&out_dir.join(format!("iter{j:02}_u.bin")), &pair.u)?;
            write_vector(&out_dir.join(format!("iter{j:02}_v.bin")), &pair.v)?;
        }
    }
    w.flush()?;
    Ok(run.pairs)
}

fn check_step(failures: &mut Vec<Failure>, j: usize, r: &StepReport, pair: &AdmissiblePair, gradient_cap: f64) {
    let d = &r.diagnostics;
    let mut fail = |name: &str, detail: String| failures.push(Failure::new(name, Some(j), detail));
    if r.residual_after > r.eps {
        fail("residual", format!("{:e} above eps {}", r.residual_after, r.eps));
    }
    if r.sup_increment >= r.eta {
        fail("sup-increment", format!("{:e} not below eta {}", r.sup_increment, r.eta));
    }
    if d.boundary_trace_change != 0.0 {
        fail("boundary-trace", format!("trace changed by {:e}", d.boundary_trace_change));
    }
    if d.membership_fraction < 0.99 {
        fail("membership", format!("fraction {}", d.membership_fraction));
    }
    if d.max_ut >= pair.mu {
        fail("time-derivative", format!("|u_t| = {} not below mu = {}", d.max_ut, pair.mu));
    }
    if d.max_gradient > gradient_cap {
        fail("gradient-bound", format!("|Du| = {} above {}", d.max_gradient, gradient_cap));
    }
    if !r.split.passed {
        fail("eps-split", format!("{:?}", r.split));
    }
}
