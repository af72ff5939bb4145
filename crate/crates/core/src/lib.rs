//! Sparse domination for Dunkl-Calderon-Zygmund operators on discretized domains.
//!
//! Modules follow the pipeline: reflection geometry, the Dunkl measure on a grid,
//! dyadic cube systems, operators and maximal functions, weights, the sparse
//! construction, and weighted-bound experiments driven by the harness.

pub mod bounds;
pub mod dyadic;
pub mod error;
pub mod harness;
pub mod measure;
pub mod operators;
pub mod reflection;
pub mod sparse;
mod spatial;
pub mod trials;
pub mod weights;

pub use error::{Error, Result};
