//! Numerical diagnostics for near-singular incompressible flows.
//!
//! The crate works on periodic cubes sampled on uniform grids and provides:
//!
//! * [`grid`]: fields, FFT transforms, spectral derivatives, Leray projection,
//!   Riesz transforms and pressure recovery.
//! * [`profile`]: the self-similar logarithmic blow-up profile and the closed-form
//!   radial integrals that bound its norms.
//! * [`norms`]: L^p, weak Lorentz (in time), BMO, Morrey and Littlewood–Paley
//!   block estimators.
//! * [`local_energy`]: scale-invariant quantities on parabolic cylinders, the local
//!   energy balance with a backward heat kernel, decay ledgers and the
//!   ε-regularity predicate.
//! * [`energy_measure`]: energy densities, weak-∗ pairings, local and concentration
//!   dimensions, and energy-equality residuals.
//! * [`flow`]: exact flows (Beltrami, Taylor–Green, shear modes), profile ladders
//!   and a pseudo-spectral stepper.
//! * [`report`]: run configuration and the verification suite.

pub mod energy_measure;
pub mod error;
pub mod flow;
pub mod grid;
pub mod io;
pub mod local_energy;
pub mod norms;
pub mod profile;
pub mod quad;
pub mod report;
pub mod spacetime;

pub use error::{Error, Result};
pub use grid::{Grid3, ScalarField, SpectralRep, VectorField};
