//! Two-level oscillations along rank-one directions and the patches that
//! push a pair toward the Perona-Malik graph while staying in `S_delta`.

pub mod cutoff;
pub mod patch;
pub mod staircase;

pub use cutoff::BoxCutoff;
pub use patch::{
    build_oscillation, build_patch, p_operator, sample_points, Oscillation, OscillationSpec, PairSample, Patch,
    PatchCertificates, PatchOptions, Potential, PotentialJet,
};
pub use staircase::{ProfileJet, StaircaseProfile};
