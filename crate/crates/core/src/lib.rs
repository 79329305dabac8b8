//! Simulation and reconstruction toolkit for two coupled Kerr parametric
//! oscillators: cat-state generation, Fock-to-cat Bell-state conversion, a
//! parametric two-cat gate, Wigner-function measurement and density-matrix
//! tomography.
//!
//! Frequencies are ordinary frequencies in MHz and times are in µs; the
//! Hamiltonian multiplies every frequency by 2π internally.

// NaN must fail range checks, so `!(x > 0.0)` is intended.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod evolve;
pub mod experiments;
pub mod fockspace;
pub mod model;
pub mod pulses;
pub mod scalar;
mod sparse;
pub mod special;
pub mod tomography;
pub mod wigner;

pub use error::{Error, Result};
pub use scalar::Real;

/// Double-precision operator.
pub type Operator = fockspace::Operator<f64>;
/// Double-precision state.
pub type QuantumState = fockspace::QuantumState<f64>;
pub type Complex64 = num_complex::Complex<f64>;
