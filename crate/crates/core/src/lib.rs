//! Numerical laboratory for long-time oscillation of radial NLS solutions
//! near a minimal-mass ground state.

pub mod error;
pub mod evolver;
pub mod grid;
pub mod ground;
pub mod interp;
pub mod linalg;
pub mod linearization;
pub mod modulation;
pub mod nonlinearity;
pub mod profile;
pub mod reduced;
pub mod spectrum;

#[cfg(test)]
mod fixtures;

pub use error::{Error, Result};
pub use grid::RadialGrid;
pub use nonlinearity::Nonlinearity;
pub use ground::{GroundStateFamily, WellGeometry};
pub use profile::RadialProfile;
