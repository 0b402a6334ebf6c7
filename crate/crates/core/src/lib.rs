//! Pseudo-spectral laboratory for the 2D incompressible stochastic
//! Navier-Stokes equations with fading memory.
//!
//! The stochastic system is reduced to a pathwise random ODE by an
//! Ornstein-Uhlenbeck change of variables, discretized with a Fourier-Galerkin
//! method on a periodic box, and integrated with an integrating-factor Heun
//! scheme. The memory is carried by the past-history variable on a geometric
//! grid of ages.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attractor;
pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod memory;
pub mod profiles;
pub mod solver;
pub mod spaces;
pub mod stochastic;
pub mod trilinear;
pub mod verify;

pub use error::{Error, Result};
pub use spaces::{PhysicalField, Space, SpectralField, SpectralGrid};
