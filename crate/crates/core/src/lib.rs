//! Simulation of excitation transport through chains of inductively coupled
//! fluxonium qubits.
//!
//! The crate is organized bottom-up:
//!
//! - [`circuit`] solves a single fluxonium and projects it onto its two lowest levels.
//! - [`chain`] assembles the many-body chain Hamiltonian on `2^L` basis states.
//! - [`evolution`] integrates the Schrodinger equation and extracts peak excitation probabilities.
//! - [`ensemble`] samples disorder realizations and runs them on a worker pool.
//! - [`analysis`] turns ensembles into distributions, localization lengths and dispersion data.
//! - [`io`] holds run configurations, provenance and the file formats used by the `fluxchain` binary.
//!
//! Energies are linear frequencies in GHz, times are in ns and fluxes in radians.

pub mod analysis;
pub mod chain;
pub mod circuit;
pub mod error;
pub mod ensemble;
pub mod evolution;
pub mod io;

pub use error::{Error, Result};
