//! Numerics for building approximate weak solutions of forward-backward
//! parabolic equations by convex integration.

pub mod convint;
pub mod divinv;
pub mod domain;
pub mod error;
pub mod field;
pub mod flux;
pub mod hull;
pub mod io;
pub mod parabolic;
pub mod quad;
pub mod stitcher;

pub use error::{Error, Result};
