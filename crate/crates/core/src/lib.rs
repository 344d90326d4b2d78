//! f-weighted first-passage percolation on `Z^d` and the deterministic
//! weighted metric that describes its large-scale shape.
//!
//! Modules, bottom-up:
//!
//! - [`lattice`]: vertices, edges, midpoints and cluster boundaries.
//! - [`weights`]: alpha-weight functions, norms and their constants.
//! - [`engine`]: FPP growth and the weighted Eden chain.
//! - [`dmetric`]: lengths, distances and balls of the weighted metric.
//! - [`geometry`]: cylinder norms, cones and the empirical limit-shape norm.
//! - [`experiments`]: replicated experiments with JSON and CSV reports.
//! - [`cli`]: the `wfpp` command line.

pub mod cli;
pub mod dmetric;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod lattice;
pub mod numeric;
pub mod weights;

pub use error::{Error, Result};
