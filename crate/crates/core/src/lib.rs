//! Pseudospectral laboratory for the compressible Euler-Korteweg system near
//! a constant state with vanishing sound speed.
//!
//! The crate is organised bottom-up: [`grid`] and [`field`] provide the
//! periodic spectral substrate, [`lp`] the Littlewood-Paley toolbox,
//! [`model`] the constitutive functions, [`madelung`] the map to the complex
//! variable `z = ell + i psi`, [`dynamics`] the two integrators,
//! [`scattering`] the final-data construction and decay fits, [`resonance`]
//! the bilinear phase symbols and [`energy`] the weighted-energy and
//! continuation monitors.

pub mod dynamics;
pub mod energy;
pub mod error;
pub mod fft;
pub mod field;
pub mod grid;
mod kernel;
pub mod lp;
pub mod madelung;
pub mod model;
pub mod random;
pub mod resonance;
pub mod scattering;
pub mod snapshot;

pub use error::{EkError, Result};
pub use field::{Representation, SpectralField};
pub use grid::Grid;
pub use model::CapillarityModel;
