//! Spectral toolkit for quasilinear Schrödinger equations on a periodic box.
//!
//! The crate is organized bottom-up: [`spectral`] supplies grids, transforms and
//! Littlewood-Paley pieces; [`spaces`] the local energy norms and frequency
//! envelopes; [`model`] nonlinearities and paradifferential operators;
//! [`hamilton`] and [`nontrap`] the bicharacteristic flow and trapping
//! diagnostics; [`multiplier`] the phase-space escape symbols; [`solver`] the
//! linear flow, the nonlinear iteration and its experiments.

pub mod error;
pub mod hamilton;
pub mod model;
pub mod multiplier;
pub mod nontrap;
pub mod ode;
pub mod sample;
pub mod solver;
pub mod spaces;
pub mod spectral;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
