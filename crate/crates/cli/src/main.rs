use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use cvxint::flux::m_bounds;
use cvxint::hull::{classify, lamination_expr, rank_one_decompose, s_delta_expr, ReducedPoint};
use cvxint_cli::{run_experiment, verify_suite, Level, RunConfig};

#[derive(Parser)]
#[command(name = "cvxint", version, about = "Approximate weak solutions of forward-backward diffusion")]
struct Cli {
    /// Overrides the seed of the config or the verify suite.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory of a run.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Caps the worker threads.
    #[arg(long, env = "CVXINT_THREADS", global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Builds the datum and runs the density iteration of a config.
    Run { config: PathBuf },
    /// Runs the property checks and prints a pass/fail table.
    Verify {
        #[arg(long, default_value = "quick")]
        level: Level,
    },
    /// Classifies one point and prints its rank-one splitting.
    HullProbe {
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        p: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        beta: Vec<f64>,
        #[arg(long)]
        delta: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        // only fails if a pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { config } => {
            let mut cfg = RunConfig::load(&config).with_context(|| format!("reading {}", config.display()))?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            if let Some(d) = cli.out_dir {
                cfg.out_dir = Some(d);
            }
            let out = cfg
                .out_dir
                .clone()
                .unwrap_or_else(|| PathBuf::from("runs").join(&cfg.name));
            cfg.validate()?;
            let outcome = run_experiment(&cfg, &out)?;
            let m = &outcome.manifest;
            for s in &m.steps {
                println!(
                    "step {}  eps {:<8} residual {:.4e} -> {:.4e}  patches {}",
                    s.step, s.eps, s.residual_before, s.residual_after, s.patches_applied
                );
            }
            for f in &m.failures {
                eprintln!("certificate `{}` failed: {}", f.certificate, f.detail);
            }
            println!("{} ({})", if m.passed { "passed" } else { "FAILED" }, out.display());
            Ok(if m.passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Verify { level } => {
            let report = verify_suite(level, cli.seed.unwrap_or(0));
            print!("{}", report.table());
            Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::HullProbe { p, beta, delta } => {
            anyhow::ensure!(!p.is_empty() && p.len() == beta.len(), "--p and --beta need equal lengths");
            let (m_minus, m_plus) = m_bounds(delta)?;
            let point = ReducedPoint::new(p, beta);
            let frame = rank_one_decompose(&point, 1.0).ok();
            let out = json!({
                "membership": format!("{:?}", classify(&point, delta, m_minus)),
                "lamination_expr": lamination_expr(&point),
                "s_delta_expr": s_delta_expr(&point, delta),
                "m_minus": m_minus,
                "m_plus": m_plus,
                "frame": frame.as_ref().map(|f| json!({
                    "q": f.q, "gamma": f.gamma, "t_minus": f.t_minus, "t_plus": f.t_plus, "lambda": f.lam,
                })),
                "residual": frame.as_ref().map(|f| f.endpoint_residual(&point)),
            });
            println!("{}", serde_json::to_string_pretty(&out)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}
