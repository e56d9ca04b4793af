//! Density steps that drive an admissible pair towards the exact inclusion.

mod cover;
mod density;
mod pair;
mod weak;

pub use cover::{
    boundary_distance, classify_cells, cube_oscillation, scan_nodes, tile, CoverOptions, Cube, CubeCover, NodeScan,
};
pub use density::{density_step, iterate, EpsSplit, IterationRun, StepOptions, StepReport};
pub use pair::{residual, AdmissiblePair, AppliedPatch, PairDiagnostics};
pub use weak::*;
