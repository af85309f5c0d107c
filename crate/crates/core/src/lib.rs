//! Monte Carlo simulation and finite-size-scaling analysis of the Ising
//! model with fractional-derivative (Riesz) long-range couplings.

pub mod analysis;
pub mod campaign;
pub mod couplings;
pub mod engine;
pub mod fss;
pub mod lattice;
pub mod parallel;
mod special;
pub mod stats;
pub mod store;
pub mod trotter;

pub use couplings::{CouplingTable, FractionalOrder, PeriodicCouplingTable};
pub use engine::{Algorithm, RunOutput, RunSpec};
pub use lattice::{ClassicalModel, Geometry, SpinConfiguration};
pub use parallel::Parallelism;
