//! Configuration, experiment orchestration and verification for the
//! `cvxint` command-line tool.

pub mod config;
pub mod experiment;
pub mod verify;

pub use config::{InitialDatum, RunConfig};
pub use experiment::{run_experiment, Failure, Manifest, RunOutcome};
pub use verify::{verify_suite, Level, VerifyReport};
