//! Hard-sphere gas in the slab `[0,1] x T^2` with diffuse-in-angle wall
//! reflection, in the Boltzmann-Grad scaling `N eps^2 = 1`.
//!
//! The crate provides an event-driven simulator of the particle system,
//! Monte Carlo evaluation of the Duhamel series for the BBGKY and Boltzmann
//! hierarchies through backward pseudotrajectories, a solver for the
//! one-particle Boltzmann equation in mild form, and the analysis harness
//! that compares them.

pub mod density;
pub mod duhamel;
pub mod geometry;
pub mod harness;
pub mod kernels;
pub mod pseudo;
pub mod quadrature;
pub mod randomness;
pub mod sim;
pub mod solver;
pub mod stats;

pub type Vec3 = nalgebra::Vector3<f64>;

pub use density::{DensityFunction, GaussianEnvelope};
pub use geometry::{Position, Wall, WallHit};
pub use randomness::{ReflectionRecord, RngSeed};
pub use sim::{Particle, SystemState};
pub use stats::Estimate;
