//! Simulation and verification toolkit for mean-field SDEs with singular
//! interaction kernels.
//!
//! The particle system, the nonlinear Fokker-Planck solver and the density
//! estimators share one grid type and one counter-based RNG, so every
//! experiment is reproducible from its seed alone.

pub mod conv;
pub mod cutoff;
pub mod density;
pub mod error;
pub mod fpe;
pub mod grid;
pub mod kernels;
pub mod metrics;
pub mod particles;
pub mod quadrature;
pub mod rng;

pub use error::{Error, Result};
