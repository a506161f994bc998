//! Range-separated tensor representations of N-particle potentials on
//! Cartesian grids.
//!
//! A radial kernel is expanded into a Gaussian sum, projected onto a grid as
//! a canonical tensor, and split into long- and short-range terms. The
//! potential of a particle system is then the sum of a low-rank long-range
//! tensor and localized short-range copies.

pub mod assembly;
pub mod error;
pub mod formats;
pub mod io;
pub mod kernel;
pub mod observables;
pub mod particles;
pub mod rankred;
pub mod scattered;
pub mod sum;

pub use error::{Error, Result};
