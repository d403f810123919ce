//! Quantum-state-diffusion simulation of vibrational decoherence in a Morse
//! oscillator, with a master-equation reference integrator.
//!
//! All quantities inside the crate are Hartree atomic units; see [`units`]
//! for conversions at the I/O boundary.

pub mod ensemble;
pub mod error;
pub mod export;
pub mod lindblad;
pub mod morse;
pub mod observables;
pub mod qsd;
pub mod qstate;
pub mod spectral;
pub mod units;

pub use error::{Error, Result};
pub use num_complex::Complex64;
