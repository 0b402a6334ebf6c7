use std::io::{Read, Write};
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::grid::SpectralGrid;
use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const FIELD_MAGIC: &[u8; 4] = b"VFLD";
const FIELD_VERSION: u32 = 1;

/// Norm scale of the nested spaces `H`, `V = D(A^{1/2})` and `W = D(A)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Space {
    H,
    V,
    W,
}

impl Space {
    #[inline]
    fn weight(self, ksq: f64) -> f64 {
        match self {
            Space::H => 1.0,
            Space::V => ksq,
            Space::W => ksq * ksq,
        }
    }
}

/// Real, mean-zero vector field on the periodic box, stored as Fourier
/// coefficients `u(x) = sum_k u_hat(k) exp(i k.x)`.
#[derive(Clone, Debug)]
pub struct SpectralField {
    grid: Arc<SpectralGrid>,
    c1: Vec<Complex64>,
    c2: Vec<Complex64>,
    solenoidal: bool,
}

/// Physical-space samples of a vector field on the `N x N` grid.
#[derive(Clone, Debug)]
pub struct PhysicalField {
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
}

impl SpectralField {
    pub fn zeros(grid: &Arc<SpectralGrid>) -> Self {
        let len = grid.len();
        Self {
            grid: Arc::clone(grid),
            c1: vec![ZERO; len],
            c2: vec![ZERO; len],
            solenoidal: true,
        }
    }

    /// Builds a field from raw coefficients. The mean and Nyquist modes are
    /// cleared; the result is not flagged divergence-free.
    pub fn from_coefficients(
        grid: &Arc<SpectralGrid>,
        c1: Vec<Complex64>,
        c2: Vec<Complex64>,
    ) -> Result<Self> {
        let len = grid.len();
        for got in [c1.len(), c2.len()] {
            if got != len {
                return Err(Error::SizeMismatch { expected: len, got });
            }
        }
        let mut f = Self {
            grid: Arc::clone(grid),
            c1,
            c2,
            solenoidal: false,
        };
        f.clear_unrepresented();
        Ok(f)
    }

    fn clear_unrepresented(&mut self) {
        let n = self.grid.n();
        let half = n / 2;
        self.c1[0] = ZERO;
        self.c2[0] = ZERO;
        for t in 0..n {
            for idx in [half * n + t, t * n + half] {
                self.c1[idx] = ZERO;
                self.c2[idx] = ZERO;
            }
        }
    }

    pub fn grid(&self) -> &Arc<SpectralGrid> {
        &self.grid
    }

    pub fn c1(&self) -> &[Complex64] {
        &self.c1
    }

    pub fn c2(&self) -> &[Complex64] {
        &self.c2
    }

    pub(crate) fn components_mut(&mut self) -> (&mut [Complex64], &mut [Complex64]) {
        (&mut self.c1, &mut self.c2)
    }

    pub fn is_solenoidal(&self) -> bool {
        self.solenoidal
    }

    pub(crate) fn set_solenoidal(&mut self, flag: bool) {
        self.solenoidal = flag;
    }

    pub(crate) fn check_grid(&self, other: &SpectralField) -> Result<()> {
        if self.grid.same_as(&other.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    /// Leray projection onto divergence-free fields.
    pub fn leray_project(&self) -> Self {
        let g = &self.grid;
        let (k1, k2, ksq) = (g.k1(), g.k2(), g.ksq());
        let mut out = self.clone();
        for idx in 0..g.len() {
            if ksq[idx] == 0.0 {
                out.c1[idx] = ZERO;
                out.c2[idx] = ZERO;
                continue;
            }
            let div = self.c1[idx] * k1[idx] + self.c2[idx] * k2[idx];
            let s = div / ksq[idx];
            out.c1[idx] -= s * k1[idx];
            out.c2[idx] -= s * k2[idx];
        }
        out.solenoidal = true;
        out
    }

    /// Applies `|k|^r` mode-wise; `r = 2` is the Stokes operator.
    pub fn stokes_apply(&self, r: f64) -> Self {
        let mut out = self.clone();
        if r == 0.0 {
            return out;
        }
        for ((a, b), &k) in out.c1.iter_mut().zip(&mut out.c2).zip(self.grid.ksq()) {
            let w = if k == 0.0 {
                0.0
            } else if r == 2.0 {
                k
            } else {
                k.powf(0.5 * r)
            };
            *a *= w;
            *b *= w;
        }
        out
    }

    pub fn inner(&self, other: &SpectralField, space: Space) -> Result<f64> {
        self.check_grid(other)?;
        Ok(self.inner_unchecked(other, space))
    }

    pub(crate) fn inner_unchecked(&self, other: &SpectralField, space: Space) -> f64 {
        let mut acc = 0.0;
        for (idx, &k) in self.grid.ksq().iter().enumerate() {
            let w = space.weight(k);
            if w == 0.0 {
                continue;
            }
            let p = self.c1[idx] * other.c1[idx].conj() + self.c2[idx] * other.c2[idx].conj();
            acc += w * p.re;
        }
        let l = self.grid.length();
        acc * l * l
    }

    /// Complex inner sum before taking the real part; used to confirm the
    /// imaginary residue vanishes for Hermitian fields.
    pub fn inner_complex(&self, other: &SpectralField, space: Space) -> Result<Complex64> {
        self.check_grid(other)?;
        let mut acc = ZERO;
        for (idx, &k) in self.grid.ksq().iter().enumerate() {
            let w = space.weight(k);
            acc += (self.c1[idx] * other.c1[idx].conj() + self.c2[idx] * other.c2[idx].conj()) * w;
        }
        let l = self.grid.length();
        Ok(acc * (l * l))
    }

    pub fn norm_sq(&self, space: Space) -> f64 {
        let mut acc = 0.0;
        for ((a, b), &k) in self.c1.iter().zip(&self.c2).zip(self.grid.ksq()) {
            acc += space.weight(k) * (a.norm_sqr() + b.norm_sqr());
        }
        let l = self.grid.length();
        acc * l * l
    }

    pub fn norm(&self, space: Space) -> f64 {
        self.norm_sq(space).sqrt()
    }

    /// `max_k |k . u_hat(k)|`.
    pub fn divergence_max(&self) -> f64 {
        let g = &self.grid;
        let (k1, k2) = (g.k1(), g.k2());
        (0..g.len())
            .map(|idx| (self.c1[idx] * k1[idx] + self.c2[idx] * k2[idx]).norm())
            .fold(0.0, f64::max)
    }

    /// Largest `|u_hat(-k) - conj(u_hat(k))|` over representable modes.
    pub fn hermitian_defect(&self) -> f64 {
        let g = &self.grid;
        let mut worst: f64 = 0.0;
        for idx in 0..g.len() {
            let (m1, m2) = g.mode(idx);
            if let Some(mirror) = g.index_of(-m1, -m2) {
                worst = worst
                    .max((self.c1[mirror] - self.c1[idx].conj()).norm())
                    .max((self.c2[mirror] - self.c2[idx].conj()).norm());
            }
        }
        worst
    }

    /// Zeroes every mode outside the 2/3-rule band.
    pub fn dealias(&mut self) {
        for ((a, b), &keep) in self.c1.iter_mut().zip(&mut self.c2).zip(self.grid.dealias_mask()) {
            if !keep {
                *a = ZERO;
                *b = ZERO;
            }
        }
    }

    pub fn scale(&mut self, a: f64) {
        for c in self.c1.iter_mut().chain(self.c2.iter_mut()) {
            *c *= a;
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    /// `self += a * x`.
    pub fn add_scaled(&mut self, a: f64, x: &SpectralField) {
        debug_assert!(self.grid.same_as(&x.grid));
        if a == 0.0 {
            return;
        }
        for (s, v) in self.c1.iter_mut().zip(&x.c1) {
            *s += v * a;
        }
        for (s, v) in self.c2.iter_mut().zip(&x.c2) {
            *s += v * a;
        }
        self.solenoidal &= x.solenoidal;
    }

    /// Overwrites `self` with `sum a_i x_i` in one pass.
    pub(crate) fn set_combination(&mut self, terms: &[(f64, &SpectralField)]) {
        self.c1.fill(ZERO);
        self.c2.fill(ZERO);
        self.solenoidal = true;
        for &(a, x) in terms {
            self.add_scaled(a, x);
        }
    }

    /// [`set_combination`](Self::set_combination) on the dealiased modes
    /// only; entries elsewhere are left untouched.
    pub(crate) fn set_combination_banded(&mut self, terms: &[(f64, &SpectralField)]) {
        let grid = Arc::clone(&self.grid);
        let active = grid.active_modes();
        let (c1, c2) = (&mut self.c1, &mut self.c2);
        match terms {
            [] => {
                for &i in active {
                    c1[i] = ZERO;
                    c2[i] = ZERO;
                }
                self.solenoidal = true;
            }
            [(a, x), rest @ ..] => {
                for &i in active {
                    c1[i] = x.c1[i] * a;
                    c2[i] = x.c2[i] * a;
                }
                let mut solenoidal = x.solenoidal;
                for (a, x) in rest {
                    for &i in active {
                        c1[i] += x.c1[i] * a;
                        c2[i] += x.c2[i] * a;
                    }
                    solenoidal &= x.solenoidal;
                }
                self.solenoidal = solenoidal;
            }
        }
    }

    /// [`add_scaled`](Self::add_scaled) on the dealiased modes only.
    pub(crate) fn add_scaled_banded(&mut self, a: f64, x: &SpectralField) {
        debug_assert!(self.grid.same_as(&x.grid));
        for &i in self.grid.active_modes() {
            self.c1[i] += x.c1[i] * a;
            self.c2[i] += x.c2[i] * a;
        }
        self.solenoidal &= x.solenoidal;
    }

    /// True when every mode outside the dealias mask is zero.
    pub fn is_band_limited(&self) -> bool {
        let mask = self.grid.dealias_mask();
        (0..mask.len()).all(|i| mask[i] || (self.c1[i] == ZERO && self.c2[i] == ZERO))
    }

    pub fn add(&self, x: &SpectralField) -> Self {
        let mut out = self.clone();
        out.add_scaled(1.0, x);
        out
    }

    pub fn sub(&self, x: &SpectralField) -> Self {
        let mut out = self.clone();
        out.add_scaled(-1.0, x);
        out
    }

    /// Mode-wise multiplication by a real factor table (length `N^2`).
    pub(crate) fn mul_modes(&mut self, factors: &[f64]) {
        for ((a, b), &f) in self.c1.iter_mut().zip(self.c2.iter_mut()).zip(factors) {
            *a *= f;
            *b *= f;
        }
    }

    pub fn max_abs_diff(&self, other: &SpectralField) -> f64 {
        self.c1
            .iter()
            .zip(&other.c1)
            .chain(self.c2.iter().zip(&other.c2))
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Physical samples on the `N x N` grid.
    pub fn synthesize(&self) -> PhysicalField {
        let mut scratch = Vec::new();
        let mut a = self.c1.clone();
        let mut b = self.c2.clone();
        self.grid.fft2(&mut a, true, &mut scratch);
        self.grid.fft2(&mut b, true, &mut scratch);
        PhysicalField {
            u1: a.into_iter().map(|c| c.re).collect(),
            u2: b.into_iter().map(|c| c.re).collect(),
        }
    }

    /// Fourier analysis of physical samples. The mean mode is discarded.
    pub fn analyze(grid: &Arc<SpectralGrid>, samples: &PhysicalField) -> Result<Self> {
        let len = grid.len();
        for got in [samples.u1.len(), samples.u2.len()] {
            if got != len {
                return Err(Error::SizeMismatch { expected: len, got });
            }
        }
        let mut scratch = Vec::new();
        let norm = 1.0 / len as f64;
        let mut a: Vec<Complex64> = samples.u1.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        let mut b: Vec<Complex64> = samples.u2.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        grid.fft2(&mut a, false, &mut scratch);
        grid.fft2(&mut b, false, &mut scratch);
        for c in a.iter_mut().chain(b.iter_mut()) {
            *c *= norm;
        }
        Self::from_coefficients(grid, a, b)
    }

    /// Seeded divergence-free field with `|u_hat(k)| = |k|^{-p}` on the
    /// dealiased band and uniformly random phases.
    pub fn random(grid: &Arc<SpectralGrid>, seed: u64, decay: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = Self::zeros(grid);
        let cutoff = grid.dealias_cutoff();
        let k_unit = grid.k_unit();
        for m1 in 0..=cutoff {
            for m2 in -cutoff..=cutoff {
                if m1 == 0 && m2 <= 0 {
                    continue;
                }
                let phase: f64 = rng.gen::<f64>() * std::f64::consts::TAU;
                let (a, b) = (k_unit * m1 as f64, k_unit * m2 as f64);
                let kk = (a * a + b * b).sqrt();
                // Stream function psi with |psi| = |k|^{-p-1}; u = (-d2 psi, d1 psi).
                let psi = Complex64::from_polar(kk.powf(-decay - 1.0), phase);
                let i = Complex64::new(0.0, 1.0);
                let u1 = -i * b * psi;
                let u2 = i * a * psi;
                let fwd = grid.index_of(m1, m2).expect("band mode");
                let back = grid.index_of(-m1, -m2).expect("band mode");
                f.c1[fwd] = u1;
                f.c2[fwd] = u2;
                f.c1[back] = u1.conj();
                f.c2[back] = u2.conj();
            }
        }
        f.solenoidal = true;
        f
    }

    /// Writes the binary record: magic, version, `L`, `N`, flag, then per mode
    /// in row-major order `(u1.re, u1.im, u2.re, u2.im)`, all little-endian.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(FIELD_MAGIC)?;
        w.write_all(&FIELD_VERSION.to_le_bytes())?;
        w.write_all(&self.grid.length().to_le_bytes())?;
        w.write_all(&(self.grid.n() as u32).to_le_bytes())?;
        w.write_all(&[u8::from(self.solenoidal)])?;
        let mut buf = Vec::with_capacity(self.c1.len() * 32);
        for (a, b) in self.c1.iter().zip(&self.c2) {
            for x in [a.re, a.im, b.re, b.im] {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    /// Reads a record written by [`SpectralField::write_to`]. When `grid` is
    /// given the header must match it; otherwise a fresh grid is built.
    pub fn read_from<R: Read>(r: &mut R, grid: Option<&Arc<SpectralGrid>>) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != FIELD_MAGIC {
            return Err(Error::Format("bad field magic".into()));
        }
        let version = read_u32(r)?;
        if version != FIELD_VERSION {
            return Err(Error::Format(format!("unsupported field version {version}")));
        }
        let length = read_f64(r)?;
        let n = read_u32(r)? as usize;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let grid = match grid {
            Some(g) => {
                if g.n() != n || g.length().to_bits() != length.to_bits() {
                    return Err(Error::GridMismatch);
                }
                Arc::clone(g)
            }
            None => SpectralGrid::new(length, n)?,
        };
        let len = grid.len();
        let mut raw = vec![0u8; len * 32];
        r.read_exact(&mut raw)?;
        let mut c1 = Vec::with_capacity(len);
        let mut c2 = Vec::with_capacity(len);
        for chunk in raw.chunks_exact(32) {
            let x = |o: usize| f64::from_le_bytes(chunk[o..o + 8].try_into().unwrap());
            c1.push(Complex64::new(x(0), x(8)));
            c2.push(Complex64::new(x(16), x(24)));
        }
        Ok(Self {
            grid,
            c1,
            c2,
            solenoidal: flag[0] != 0,
        })
    }
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};
    use std::f64::consts::PI;

    fn grid(n: usize) -> Arc<SpectralGrid> {
        SpectralGrid::new(2.0 * PI, n).unwrap()
    }

    fn unprojected(g: &Arc<SpectralGrid>, seed: u64) -> SpectralField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phys = PhysicalField {
            u1: (0..g.len()).map(|_| rng.gen::<f64>() - 0.5).collect(),
            u2: (0..g.len()).map(|_| rng.gen::<f64>() - 0.5).collect(),
        };
        SpectralField::analyze(g, &phys).unwrap()
    }

    fn gradient_of_random(g: &Arc<SpectralGrid>, seed: u64) -> SpectralField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phi: Vec<f64> = (0..g.len()).map(|_| rng.gen::<f64>()).collect();
        let potential = SpectralField::analyze(
            g,
            &PhysicalField {
                u1: phi.clone(),
                u2: vec![0.0; g.len()],
            },
        )
        .unwrap();
        let i = Complex64::new(0.0, 1.0);
        let c1: Vec<_> = (0..g.len()).map(|k| i * g.k1()[k] * potential.c1[k]).collect();
        let c2: Vec<_> = (0..g.len()).map(|k| i * g.k2()[k] * potential.c1[k]).collect();
        SpectralField::from_coefficients(g, c1, c2).unwrap()
    }

    #[test]
    fn projection_kills_gradients() {
        let g = grid(32);
        let grad = gradient_of_random(&g, 3);
        assert!(grad.norm(Space::H) > 1.0);
        let p = grad.leray_project();
        assert!(p.norm(Space::H) <= 1e-13 * grad.norm(Space::H));
    }

    #[test]
    fn projection_keeps_solenoidal_fields() {
        let g = grid(32);
        let u = SpectralField::random(&g, 11, 1.0);
        let p = u.leray_project();
        assert!(p.sub(&u).norm(Space::H) <= 1e-15 * u.norm(Space::H));
    }

    #[test]
    fn projection_divergence_and_idempotence() {
        let g = grid(32);
        for seed in 0..10 {
            let u = unprojected(&g, seed);
            let p = u.leray_project();
            assert!(p.is_solenoidal());
            assert!(p.divergence_max() <= 1e-12 * p.norm(Space::V));
            let pp = p.leray_project();
            assert!(pp.sub(&p).norm(Space::H) <= 1e-14 * p.norm(Space::H));
        }
    }

    #[test]
    fn projection_is_orthogonal_to_gradients() {
        let g = grid(32);
        for seed in 0..10 {
            let u = unprojected(&g, 100 + seed).leray_project();
            let grad = gradient_of_random(&g, 200 + seed);
            let ip = u.inner(&grad, Space::H).unwrap().abs();
            // |<Pu, grad phi>| against ||u|| ||phi||_V, and ||grad phi|| = ||phi||_V.
            assert!(ip <= 1e-12 * u.norm(Space::H) * grad.norm(Space::H));
        }
    }

    #[test]
    fn stokes_powers() {
        let g = grid(16);
        let u = SpectralField::random(&g, 5, 1.0);
        assert_eq!(u.stokes_apply(0.0).max_abs_diff(&u), 0.0);

        let mut single = SpectralField::zeros(&g);
        // |k|^2 = 5 for m = (1, 2).
        let idx = g.index_of(1, 2).unwrap();
        let mirror = g.index_of(-1, -2).unwrap();
        single.c1[idx] = Complex64::new(2.0, 0.0);
        single.c1[mirror] = Complex64::new(2.0, 0.0);
        let a = single.stokes_apply(2.0);
        assert!((a.c1[idx].re - 10.0).abs() < 1e-12);
        assert!((a.c1[mirror].re - 10.0).abs() < 1e-12);

        let half = u.stokes_apply(1.0);
        let rel = (half.norm(Space::H) - u.norm(Space::V)).abs() / u.norm(Space::V);
        assert!(rel < 1e-13);
    }

    #[test]
    fn parseval_single_mode() {
        let l = 3.0;
        let g = SpectralGrid::new(l, 16).unwrap();
        let zero = SpectralField::zeros(&g);
        assert_eq!(zero.norm(Space::H), 0.0);
        let mut u = SpectralField::zeros(&g);
        let idx = g.index_of(2, -1).unwrap();
        u.c2[idx] = Complex64::new(1.0, 0.0);
        let ksq = g.ksq()[idx];
        assert!((u.norm_sq(Space::H) - l * l).abs() < 1e-12);
        assert!((u.norm_sq(Space::V) - l * l * ksq).abs() < 1e-10);
    }

    #[test]
    fn inner_product_is_real_on_real_fields() {
        let g = grid(16);
        let u = SpectralField::random(&g, 1, 1.0);
        let v = SpectralField::random(&g, 2, 0.5);
        let c = u.inner_complex(&v, Space::V).unwrap();
        assert!(c.im.abs() <= 1e-12 * c.norm().max(1e-300));
        let other = SpectralGrid::new(1.0, 16).unwrap();
        assert!(matches!(
            u.inner(&SpectralField::zeros(&other), Space::H),
            Err(Error::GridMismatch)
        ));
    }

    #[test]
    fn round_trip_and_special_fields() {
        let g = grid(32);
        let u = unprojected(&g, 9);
        let back = SpectralField::analyze(&g, &u.synthesize()).unwrap();
        assert!(back.sub(&u).norm(Space::H) <= 1e-13 * u.norm(Space::H));

        let constant = PhysicalField {
            u1: vec![2.5; g.len()],
            u2: vec![-1.0; g.len()],
        };
        let c = SpectralField::analyze(&g, &constant).unwrap();
        assert!(c.norm(Space::H) < 1e-12);

        let cosine = PhysicalField {
            u1: (0..g.len())
                .map(|idx| {
                    let (x, _) = g.point(idx / g.n(), idx % g.n());
                    (3.0 * x).cos()
                })
                .collect(),
            u2: vec![0.0; g.len()],
        };
        let c = SpectralField::analyze(&g, &cosine).unwrap();
        let nonzero: Vec<usize> = (0..g.len()).filter(|&k| c.c1[k].norm() > 1e-12).collect();
        assert_eq!(nonzero.len(), 2);
        for k in nonzero {
            assert_eq!(g.mode(k).1, 0);
            assert_eq!(g.mode(k).0.abs(), 3);
            assert!((c.c1[k].re - 0.5).abs() < 1e-14);
        }

        let bad = PhysicalField {
            u1: vec![0.0; 3],
            u2: vec![0.0; 3],
        };
        assert!(SpectralField::analyze(&g, &bad).is_err());
    }

    #[test]
    fn random_field_profile() {
        let g = grid(32);
        let a = SpectralField::random(&g, 42, 4.0);
        let b = SpectralField::random(&g, 42, 4.0);
        assert_eq!(a.max_abs_diff(&b), 0.0);
        assert!(a.divergence_max() <= 1e-12 * a.norm(Space::V));
        assert!(a.hermitian_defect() == 0.0);
        let total = a.norm_sq(Space::H);
        let low: f64 = (0..g.len())
            .filter(|&k| g.ksq()[k] <= 4.0 * g.lambda1() + 1e-12)
            .map(|k| a.c1[k].norm_sqr() + a.c2[k].norm_sqr())
            .sum::<f64>()
            * g.length().powi(2);
        assert!(low / total >= 0.99, "fraction {}", low / total);
    }

    #[test]
    fn binary_record_is_bit_exact() {
        let g = SpectralGrid::new(2.0 * PI, 16).unwrap();
        let u = SpectralField::random(&g, 7, 1.3);
        let mut buf = Vec::new();
        u.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 4 + 4 + 8 + 4 + 1 + 16 * 16 * 32);
        let back = SpectralField::read_from(&mut buf.as_slice(), Some(&g)).unwrap();
        for (a, b) in u.c1.iter().zip(&back.c1).chain(u.c2.iter().zip(&back.c2)) {
            assert_eq!(a.re.to_bits(), b.re.to_bits());
            assert_eq!(a.im.to_bits(), b.im.to_bits());
        }
        let fresh = SpectralField::read_from(&mut buf.as_slice(), None).unwrap();
        assert_eq!(fresh.grid().n(), 16);
        assert!(SpectralField::read_from(&mut &buf[1..], None).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn spectral_poincare(seed in any::<u64>(), decay in 0.0f64..3.0) {
            let g = SpectralGrid::new(5.0, 16).unwrap();
            let u = unprojected(&g, seed).scaled(1.0 + decay);
            let lhs = g.lambda1() * u.norm_sq(Space::H);
            let rhs = u.norm_sq(Space::V);
            prop_assert!(rhs >= lhs - 1e-12 * rhs);
        }

        #[test]
        fn norm_consistency(seed in any::<u64>(), decay in 0.0f64..3.0) {
            let g = SpectralGrid::new(2.0 * PI, 16).unwrap();
            let u = SpectralField::random(&g, seed, decay);
            let v = u.norm_sq(Space::V);
            let via_a = u.stokes_apply(2.0).inner(&u, Space::H).unwrap();
            prop_assert!((v - via_a).abs() <= 1e-12 * v);
        }
    }
}
