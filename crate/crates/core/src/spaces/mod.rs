//! Periodic-box spectral representation of the divergence-free spaces
//! `H`, `V`, `W` and the Stokes operator.
//!
//! On mean-zero periodic fields the Stokes operator is `-Laplacian`, so the
//! plain Fourier modes form its eigenbasis and the Poincaré constant is
//! `lambda1 = (2 pi / L)^2`.

mod field;
mod grid;

pub use field::{PhysicalField, Space, SpectralField};
pub use grid::SpectralGrid;

pub(crate) use field::{read_f64, read_u32};
