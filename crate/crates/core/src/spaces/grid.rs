use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Periodic box `[0, L)^2` resolved by `N x N` Fourier modes.
///
/// Coefficients are stored row-major: flat index `i * N + j` holds the mode
/// with integer wavenumbers `(m(i), m(j))`, where `m(i) = i` for `i < N/2`
/// and `i - N` above. The Nyquist row and column are never populated.
pub struct SpectralGrid {
    length: f64,
    n: usize,
    k_unit: f64,
    cutoff: i64,
    wavenumbers: Vec<i64>,
    k1: Vec<f64>,
    k2: Vec<f64>,
    ksq: Vec<f64>,
    mask: Vec<bool>,
    active: Vec<usize>,
    fft_forward: Arc<dyn Fft<f64>>,
    fft_inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for SpectralGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralGrid")
            .field("length", &self.length)
            .field("n", &self.n)
            .field("lambda1", &self.lambda1())
            .finish()
    }
}

impl SpectralGrid {
    pub fn new(length: f64, n: usize) -> Result<Arc<Self>> {
        if !(length > 0.0) || !length.is_finite() {
            return Err(Error::InvalidGrid(format!(
                "box length must be positive, got {length}"
            )));
        }
        if !n.is_multiple_of(2) {
            return Err(Error::InvalidGrid(format!("mode count must be even, got {n}")));
        }
        if n < 8 {
            return Err(Error::InvalidGrid(format!(
                "mode count must be at least 8, got {n}"
            )));
        }
        let k_unit = 2.0 * PI / length;
        let half = (n / 2) as i64;
        let wavenumbers: Vec<i64> = (0..n as i64)
            .map(|i| if i < half { i } else { i - n as i64 })
            .collect();
        // Largest retained |m| with 3m < N, which keeps quadratic products alias-free.
        let cutoff = (n as i64 - 1) / 3;

        let mut k1 = Vec::with_capacity(n * n);
        let mut k2 = Vec::with_capacity(n * n);
        let mut ksq = Vec::with_capacity(n * n);
        let mut mask = Vec::with_capacity(n * n);
        for &mi in &wavenumbers {
            for &mj in &wavenumbers {
                let nyquist = mi == -half || mj == -half;
                let (a, b) = if nyquist {
                    (0.0, 0.0)
                } else {
                    (k_unit * mi as f64, k_unit * mj as f64)
                };
                k1.push(a);
                k2.push(b);
                ksq.push(a * a + b * b);
                mask.push(!nyquist && mi.abs() <= cutoff && mj.abs() <= cutoff);
            }
        }

        let mut planner = FftPlanner::new();
        let fft_forward = planner.plan_fft_forward(n);
        let fft_inverse = planner.plan_fft_inverse(n);

        Ok(Arc::new(Self {
            length,
            n,
            k_unit,
            cutoff,
            wavenumbers,
            k1,
            k2,
            ksq,
            active: (0..n * n).filter(|&idx| mask[idx]).collect(),
            mask,
            fft_forward,
            fft_inverse,
        }))
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of coefficients per component (`N^2`).
    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Smallest nonzero eigenvalue of the Stokes operator, `(2 pi / L)^2`.
    pub fn lambda1(&self) -> f64 {
        self.k_unit * self.k_unit
    }

    pub fn k_unit(&self) -> f64 {
        self.k_unit
    }

    /// Largest integer wavenumber kept by the 2/3 rule.
    pub fn dealias_cutoff(&self) -> i64 {
        self.cutoff
    }

    /// Integer wavenumber pair of flat index `idx`.
    pub fn mode(&self, idx: usize) -> (i64, i64) {
        (self.wavenumbers[idx / self.n], self.wavenumbers[idx % self.n])
    }

    /// Flat index of integer wavenumber pair, if representable.
    pub fn index_of(&self, m1: i64, m2: i64) -> Option<usize> {
        let n = self.n as i64;
        let half = n / 2;
        if m1 <= -half || m1 >= half || m2 <= -half || m2 >= half {
            return None;
        }
        let i = m1.rem_euclid(n) as usize;
        let j = m2.rem_euclid(n) as usize;
        Some(i * self.n + j)
    }

    pub fn k1(&self) -> &[f64] {
        &self.k1
    }

    pub fn k2(&self) -> &[f64] {
        &self.k2
    }

    pub fn ksq(&self) -> &[f64] {
        &self.ksq
    }

    pub fn dealias_mask(&self) -> &[bool] {
        &self.mask
    }

    /// Flat indices kept by the dealias mask, ascending.
    pub fn active_modes(&self) -> &[usize] {
        &self.active
    }

    /// Physical coordinate of sample `(i, j)`.
    pub fn point(&self, i: usize, j: usize) -> (f64, f64) {
        let h = self.length / self.n as f64;
        (i as f64 * h, j as f64 * h)
    }

    /// Area of one physical sample cell.
    pub fn cell_area(&self) -> f64 {
        let h = self.length / self.n as f64;
        h * h
    }

    pub(crate) fn same_as(&self, other: &SpectralGrid) -> bool {
        std::ptr::eq(self, other) || (self.n == other.n && self.length == other.length)
    }

    /// In-place 2D transform of an `N x N` row-major buffer (unnormalized).
    pub(crate) fn fft2(&self, data: &mut [Complex64], inverse: bool, scratch: &mut Vec<Complex64>) {
        let fft = if inverse {
            &self.fft_inverse
        } else {
            &self.fft_forward
        };
        let need = fft.get_inplace_scratch_len();
        if scratch.len() < need {
            scratch.resize(need, Complex64::new(0.0, 0.0));
        }
        fft.process_with_scratch(data, &mut scratch[..need]);
        transpose_square(data, self.n);
        fft.process_with_scratch(data, &mut scratch[..need]);
        transpose_square(data, self.n);
    }
}

fn transpose_square(data: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            data.swap(i * n + j, j * n + i);
        }
    }
}
