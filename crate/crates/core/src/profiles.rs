//! Forcing and noise profiles.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::spaces::{PhysicalField, Space, SpectralField, SpectralGrid};

/// A divergence-free profile, normalized to `amplitude` in the `H` norm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    Zero,
    /// `curl (Delta^order G)` for a periodized Gaussian `G` of the given width.
    GaussianVortex {
        center: [f64; 2],
        width: f64,
        order: u32,
        amplitude: f64,
    },
    /// Seeded random field with `|u_k| ~ |k|^-decay`, restricted to `|m| <= max_mode`.
    LowModes {
        seed: u64,
        max_mode: i64,
        decay: f64,
        amplitude: f64,
    },
}

impl Profile {
    pub fn build(&self, grid: &Arc<SpectralGrid>) -> Result<SpectralField> {
        let (field, amplitude) = match *self {
            Profile::Zero => return Ok(SpectralField::zeros(grid)),
            Profile::GaussianVortex {
                center,
                width,
                order,
                amplitude,
            } => (gaussian_vortex(grid, center, width, order)?, amplitude),
            Profile::LowModes {
                seed,
                max_mode,
                decay,
                amplitude,
            } => {
                let mut u = SpectralField::random(grid, seed, decay);
                let keep: Vec<f64> = (0..grid.len())
                    .map(|idx| {
                        let (m1, m2) = grid.mode(idx);
                        if m1.abs() <= max_mode && m2.abs() <= max_mode {
                            1.0
                        } else {
                            0.0
                        }
                    })
                    .collect();
                u.mul_modes(&keep);
                (u, amplitude)
            }
        };
        let norm = field.norm(Space::H);
        if norm == 0.0 {
            return Err(invalid("profile", "profile has no resolved modes"));
        }
        Ok(field.scaled(amplitude / norm))
    }
}

/// Shortest periodic offset from `c` to `x` on a circle of length `l`.
pub fn periodic_offset(x: f64, c: f64, l: f64) -> f64 {
    let d = (x - c).rem_euclid(l);
    if d > 0.5 * l {
        d - l
    } else {
        d
    }
}

fn gaussian_vortex(
    grid: &Arc<SpectralGrid>,
    center: [f64; 2],
    width: f64,
    order: u32,
) -> Result<SpectralField> {
    if !(width > 0.0) {
        return Err(invalid("width", format!("must be positive, got {width}")));
    }
    let n = grid.n();
    let l = grid.length();
    let mut g = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let (x, y) = grid.point(i, j);
            let dx = periodic_offset(x, center[0], l);
            let dy = periodic_offset(y, center[1], l);
            g[i * n + j] = (-(dx * dx + dy * dy) / (2.0 * width * width)).exp();
        }
    }
    let psi = SpectralField::analyze(
        grid,
        &PhysicalField {
            u1: g,
            u2: vec![0.0; n * n],
        },
    )?;
    let (k1, k2, ksq) = (grid.k1(), grid.k2(), grid.ksq());
    let i = Complex64::new(0.0, 1.0);
    let mut c1 = vec![Complex64::new(0.0, 0.0); grid.len()];
    let mut c2 = c1.clone();
    for idx in 0..grid.len() {
        let p = psi.c1()[idx] * (-ksq[idx]).powi(order as i32);
        // u = (d_2 psi, -d_1 psi).
        c1[idx] = i * k2[idx] * p;
        c2[idx] = -i * k1[idx] * p;
    }
    let mut u = SpectralField::from_coefficients(grid, c1, c2)?;
    u.dealias();
    Ok(u.leray_project())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn vortex_is_solenoidal_and_normalized() {
        let g = SpectralGrid::new(2.0 * PI, 32).unwrap();
        let p = Profile::GaussianVortex {
            center: [PI, PI],
            width: 0.5,
            order: 1,
            amplitude: 0.3,
        };
        let u = p.build(&g).unwrap();
        assert!(u.divergence_max() < 1e-13);
        assert!((u.norm(Space::H) - 0.3).abs() < 1e-14);
        assert!(u.hermitian_defect() < 1e-14);
    }

    #[test]
    fn vortex_is_localized() {
        let g = SpectralGrid::new(2.0 * PI, 32).unwrap();
        let c = [2.0, 4.0];
        let u = Profile::GaussianVortex {
            center: c,
            width: 0.5,
            order: 0,
            amplitude: 1.0,
        }
        .build(&g)
        .unwrap()
        .synthesize();
        let n = g.n();
        let (mut near, mut far) = (0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                let (x, y) = g.point(i, j);
                let r = periodic_offset(x, c[0], g.length()).hypot(periodic_offset(y, c[1], g.length()));
                let e = u.u1[i * n + j].powi(2) + u.u2[i * n + j].powi(2);
                if r > 2.0 {
                    far += e;
                } else {
                    near += e;
                }
            }
        }
        // Tail of |grad G|^2 beyond 4 widths: 17 e^-16 = 1.9e-6.
        assert!(far < 1e-5 * near, "{far} {near}");
    }

    #[test]
    fn low_modes_respect_band() {
        let g = SpectralGrid::new(2.0 * PI, 16).unwrap();
        let u = Profile::LowModes {
            seed: 3,
            max_mode: 2,
            decay: 1.0,
            amplitude: 2.0,
        }
        .build(&g)
        .unwrap();
        for idx in 0..g.len() {
            let (m1, m2) = g.mode(idx);
            if m1.abs() > 2 || m2.abs() > 2 {
                assert_eq!(u.c1()[idx].norm(), 0.0);
            }
        }
        assert!((u.norm(Space::H) - 2.0).abs() < 1e-13);
        assert_eq!(Profile::Zero.build(&g).unwrap().norm(Space::H), 0.0);
    }

    #[test]
    fn periodic_offsets() {
        assert!((periodic_offset(0.1, 6.0, 2.0 * PI) - (0.1 + 2.0 * PI - 6.0)).abs() < 1e-14);
        assert!((periodic_offset(3.0, 1.0, 2.0 * PI) - 2.0).abs() < 1e-14);
    }
}
