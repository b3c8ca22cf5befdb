//! Mean-field energy densities for short-range repulsive two-point costs.
//!
//! The crate is organised bottom-up:
//!
//! * [`cost`]: the cost `l`, its envelopes and hypothesis checks;
//! * [`config`]: point configurations, scaled empirical measures, energies;
//! * [`lattice`]: Bravais lattices, Epstein zeta sums and the profile `H`;
//! * [`gamma`]: the grand-canonical value `Gamma(lambda, Q_k)` and its limit `g`;
//! * [`convex`]: sampled convex functions and Legendre transforms;
//! * [`meanfield`]: the continuum problem for an external potential;
//! * [`convergence`]: discrete minima for shrinking `eps` against the continuum.

pub mod config;
pub mod convergence;
pub mod convex;
pub mod cost;
pub mod error;
pub mod extended;
pub mod gamma;
pub mod lattice;
pub mod meanfield;
pub mod quadrature;
pub mod rng;

pub use config::{AxisBox, PointConfiguration, RegularGrid, ScaledMeasure};
pub use cost::{CostFunction, CostKind, CostSpec, HypothesisReport};
pub use error::{Error, Result};
