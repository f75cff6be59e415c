//! Simulation and exact-computation toolkit for the one-dimensional noisy
//! voter model with parameters `(delta, epsilon, q)` and its dual arrow
//! percolation.

pub mod coupling;
pub mod dynamics;
pub mod enhancement;
pub mod error;
pub mod genealogy;
pub mod lattice;
pub mod qinf;
pub mod renorm;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub use lattice::{Arrow, ArrowField, ArrowRow, Boundary, Colors, LatticeWindow, ModelParams};
pub use rng::{Stream, UniformField};
pub use stats::Estimate;
