//! Scalar two-sided Wiener paths, the stationary Ornstein-Uhlenbeck
//! coefficient `z`, the tempered functional `beta1`, and the constants ledger
//! that fixes the OU rate `sigma`.

use std::f64::consts::PI;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::spaces::{Space, SpectralField};

/// Everything needed to regenerate a path bit for bit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathHeader {
    pub seed: u64,
    pub t0: f64,
    pub t1: f64,
    pub dt: f64,
}

/// Wiener increments on the grid `t = n dt`, `n` in `[first, first + len)`.
///
/// Increment `n` covers `[n dt, (n + 1) dt]` and depends only on
/// `(seed, dt, n)`: non-negative `n` read stream 0 at block offset `n`,
/// negative `n` read stream 1 at offset `-n - 1`.
#[derive(Clone, Debug)]
pub struct NoisePath {
    header: PathHeader,
    first: i64,
    increments: Vec<f64>,
}

fn grid_index(t: f64, dt: f64, up: bool) -> i64 {
    let x = t / dt;
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r as i64
    } else if up {
        x.ceil() as i64
    } else {
        x.floor() as i64
    }
}

fn unit_open(x: u64) -> f64 {
    ((x >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normals for indices `start..start+count` on one stream.
fn normals(seed: u64, stream: u64, start: u64, count: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    // Each index consumes two u64 words (four u32 words).
    rng.set_word_pos(start as u128 * 4);
    (0..count)
        .map(|_| {
            let a = unit_open(rng.next_u64());
            let b = unit_open(rng.next_u64());
            (-2.0 * a.ln()).sqrt() * (2.0 * PI * b).cos()
        })
        .collect()
}

impl NoisePath {
    pub fn sample_wiener(seed: u64, t0: f64, t1: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(invalid("dt", format!("must be positive, got {dt}")));
        }
        if !(t0 < t1) {
            return Err(invalid("t1", format!("need t0 < t1, got [{t0}, {t1}]")));
        }
        let first = grid_index(t0, dt, false);
        let last = grid_index(t1, dt, true);
        let scale = dt.sqrt();
        let mut increments = Vec::with_capacity((last - first) as usize);
        if first < 0 {
            let stop = last.min(0);
            // Negative indices map to offsets -n-1, generated ascending then reversed.
            let lo = (-stop) as u64;
            let count = (stop - first) as usize;
            let mut neg = normals(seed, 1, lo, count);
            neg.reverse();
            increments.extend(neg.into_iter().map(|x| x * scale));
        }
        if last > 0 {
            let start = first.max(0);
            let count = (last - start) as usize;
            increments.extend(
                normals(seed, 0, start as u64, count)
                    .into_iter()
                    .map(|x| x * scale),
            );
        }
        Ok(Self {
            header: PathHeader { seed, t0, t1, dt },
            first,
            increments,
        })
    }

    pub fn from_header(h: &PathHeader) -> Result<Self> {
        Self::sample_wiener(h.seed, h.t0, h.t1, h.dt)
    }

    pub fn header(&self) -> PathHeader {
        self.header
    }

    pub fn dt(&self) -> f64 {
        self.header.dt
    }

    /// Grid index of the first increment.
    pub fn first_index(&self) -> i64 {
        self.first
    }

    /// Grid index one past the last increment.
    pub fn end_index(&self) -> i64 {
        self.first + self.increments.len() as i64
    }

    pub fn len(&self) -> usize {
        self.increments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.increments.is_empty()
    }

    pub fn time(&self, n: i64) -> f64 {
        n as f64 * self.header.dt
    }

    /// Grid index of time `t` (which must lie on the grid to 1e-9 steps).
    pub fn index_of(&self, t: f64) -> Result<i64> {
        let n = grid_index(t, self.header.dt, false);
        if (n as f64 * self.header.dt - t).abs() > 1e-9 * self.header.dt.max(t.abs()) {
            return Err(invalid("t", format!("{t} is not on the path grid")));
        }
        if n < self.first || n > self.end_index() {
            return Err(invalid("t", format!("{t} lies outside the path")));
        }
        Ok(n)
    }

    /// Increment `W((n+1) dt) - W(n dt)`.
    pub fn increment(&self, n: i64) -> f64 {
        self.increments[(n - self.first) as usize]
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// `W(n dt)` with `W(0) = 0`; index 0 must be reachable from the path.
    pub fn wiener(&self, n: i64) -> Result<f64> {
        if self.first > 0.min(n) || self.end_index() < 0.max(n) {
            return Err(invalid("n", "path does not connect index to t = 0"));
        }
        let mut w = 0.0;
        if n >= 0 {
            for k in 0..n {
                w += self.increment(k);
            }
        } else {
            for k in n..0 {
                w -= self.increment(k);
            }
        }
        Ok(w)
    }
}

/// Exact OU update `z' = e^{-sigma dt} z + int e^{-sigma(dt-s)} dW`, realized
/// from the step increment with the exact conditional variance.
pub fn ou_advance(z: f64, dw: f64, dt: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(invalid("sigma", format!("must be positive, got {sigma}")));
    }
    Ok(ou_advance_unchecked(z, dw, dt, sigma))
}

pub(crate) fn ou_gain(dt: f64, sigma: f64) -> (f64, f64) {
    let decay = (-sigma * dt).exp();
    let x = 2.0 * sigma * dt;
    // (1 - e^{-x}) / x, accurate for small x.
    let ratio = if x < 1e-8 {
        1.0 - 0.5 * x
    } else {
        -(-x).exp_m1() / x
    };
    (decay, ratio.sqrt())
}

pub(crate) fn ou_advance_unchecked(z: f64, dw: f64, dt: f64, sigma: f64) -> f64 {
    let (decay, gain) = ou_gain(dt, sigma);
    decay * z + gain * dw
}

/// Stateful OU coefficient driven by a path.
#[derive(Clone, Debug)]
pub struct OuProcess {
    sigma: f64,
    z: f64,
    index: i64,
}

impl OuProcess {
    pub fn new(sigma: f64, z: f64, index: i64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(invalid("sigma", format!("must be positive, got {sigma}")));
        }
        Ok(Self { sigma, z, index })
    }

    /// Stationary start at grid index `index`: pulled back from the path start.
    pub fn stationary(path: &NoisePath, sigma: f64, index: i64) -> Result<Self> {
        let mut p = Self::new(sigma, 0.0, path.first_index())?;
        p.advance_to(path, index)?;
        Ok(p)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn index(&self) -> i64 {
        self.index
    }

    pub fn step(&mut self, path: &NoisePath) -> f64 {
        let dw = path.increment(self.index);
        self.z = ou_advance_unchecked(self.z, dw, path.dt(), self.sigma);
        self.index += 1;
        self.z
    }

    pub fn advance_to(&mut self, path: &NoisePath, index: i64) -> Result<f64> {
        if index < self.index || index > path.end_index() {
            return Err(invalid("index", "cannot advance backward or past the path"));
        }
        while self.index < index {
            self.step(path);
        }
        Ok(self.z)
    }
}

/// `z` along every grid point of the path, started from `z_start` at the first.
pub fn ou_series(path: &NoisePath, sigma: f64, z_start: f64) -> Result<Vec<f64>> {
    let mut p = OuProcess::new(sigma, z_start, path.first_index())?;
    let mut out = Vec::with_capacity(path.len() + 1);
    out.push(z_start);
    for _ in 0..path.len() {
        out.push(p.step(path));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PullbackValue {
    pub z: f64,
    /// `e^{-sigma (T_trunc - t)}`: the factor multiplying the neglected `z(-T_trunc)`.
    pub truncation_bound: f64,
}

/// `z(theta_{-t} omega)`, integrated from `z(-t_trunc) = 0` up to time `-t`.
pub fn ou_pullback(path: &NoisePath, sigma: f64, t: f64, t_trunc: f64) -> Result<PullbackValue> {
    if !(t_trunc >= t) || t < 0.0 {
        return Err(invalid("t_trunc", "need 0 <= t <= t_trunc"));
    }
    let start = path.index_of(-t_trunc)?;
    let stop = path.index_of(-t)?;
    let mut p = OuProcess::new(sigma, 0.0, start)?;
    let z = p.advance_to(path, stop)?;
    Ok(PullbackValue {
        z,
        truncation_bound: (-sigma * (t_trunc - t)).exp(),
    })
}

pub fn beta1(z: f64) -> f64 {
    let z2 = z * z;
    z2 + z2 * z2
}

/// Stationary `E beta1 = 1/(2 sigma) + 3/(4 sigma^2)`.
pub fn beta1_stationary_mean(sigma: f64) -> f64 {
    1.0 / (2.0 * sigma) + 3.0 / (4.0 * sigma * sigma)
}

/// Mean and batch-means standard error of a correlated series.
pub fn batch_mean(series: &[f64], batches: usize) -> (f64, f64) {
    let n = series.len();
    let mean = series.iter().sum::<f64>() / n.max(1) as f64;
    let b = batches.max(2).min(n.max(2));
    let size = n / b;
    if size == 0 {
        return (mean, f64::INFINITY);
    }
    let means: Vec<f64> = (0..b)
        .map(|i| series[i * size..(i + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let bm = means.iter().sum::<f64>() / b as f64;
    let var = means.iter().map(|m| (m - bm) * (m - bm)).sum::<f64>() / (b - 1) as f64;
    (mean, (var / b as f64).sqrt())
}

#[derive(Clone, Debug, Serialize)]
pub struct ErgodicReport {
    pub horizon: f64,
    pub empirical: f64,
    pub analytic: f64,
    pub std_error: f64,
    pub within_3se: bool,
    /// Whether `E beta1 <= 1/(4 sigma)`, the size condition assumed for sigma.
    pub size_condition_holds: bool,
    pub high_variance: bool,
    pub warnings: Vec<String>,
}

/// Time average of `beta1` over `[-T, 0]` against its stationary mean. The
/// path must start at or before `-T`; the part before `-T` serves as burn-in.
pub fn ergodic_average_check(path: &NoisePath, sigma: f64, horizon: f64) -> Result<ErgodicReport> {
    let begin = path.index_of(-horizon)?;
    let end = path.index_of(0.0)?;
    let mut p = OuProcess::new(sigma, 0.0, path.first_index())?;
    p.advance_to(path, begin)?;
    let mut values = Vec::with_capacity((end - begin) as usize);
    while p.index() < end {
        values.push(beta1(p.step(path)));
    }
    let analytic = beta1_stationary_mean(sigma);
    let (empirical, std_error) = if values.is_empty() {
        (0.0, f64::INFINITY)
    } else {
        batch_mean(&values, 50)
    };
    let correlation_times = horizon * sigma;
    let high_variance = correlation_times < 100.0;
    let size_condition_holds = analytic <= 1.0 / (4.0 * sigma);
    let mut warnings = Vec::new();
    if !size_condition_holds {
        warnings.push(format!(
            "E beta1 = {analytic:e} exceeds 1/(4 sigma) = {:e}; the size condition on sigma fails",
            1.0 / (4.0 * sigma)
        ));
    }
    if high_variance {
        warnings.push(format!(
            "horizon covers only {correlation_times:.1} correlation times"
        ));
    }
    Ok(ErgodicReport {
        horizon,
        empirical,
        analytic,
        std_error,
        within_3se: (empirical - analytic).abs() <= 3.0 * std_error,
        size_condition_holds,
        high_variance,
        warnings,
    })
}

/// `e^{-mu t} sup_{tau <= t} beta1(z(-tau))` for a series sampled backward
/// from time zero with spacing `dt`.
pub fn temperedness_envelope(backward: &[f64], dt: f64, mu: f64) -> Vec<f64> {
    let mut sup: f64 = 0.0;
    backward
        .iter()
        .enumerate()
        .map(|(k, &z)| {
            sup = sup.max(beta1(z));
            (-mu * k as f64 * dt).exp() * sup
        })
        .collect()
}

/// `y = z h`.
pub fn shifted_forcing(h: &SpectralField, z: f64) -> SpectralField {
    h.scaled(z)
}

/// `max(|h|, |A^1/2 h|, |A h|)`.
pub fn c_tilde(h: &SpectralField) -> f64 {
    h.norm(Space::H).max(h.norm(Space::V)).max(h.norm(Space::W))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Input,
    Measured,
    Derived,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub name: String,
    pub value: f64,
    pub provenance: Provenance,
}

/// Constants entering the dissipation estimates and the choice of sigma.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantsLedger {
    pub nu: f64,
    pub lambda1: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub c_hat: Option<f64>,
    pub c_tilde: Option<f64>,
    pub sigma: Option<f64>,
}

impl ConstantsLedger {
    pub fn new(nu: f64, lambda1: f64, delta: f64, epsilon: f64) -> Result<Self> {
        for (name, v) in [("nu", nu), ("lambda1", lambda1), ("delta", delta)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(name, format!("must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(invalid("epsilon", format!("must lie in [0, 1], got {epsilon}")));
        }
        Ok(Self {
            nu,
            lambda1,
            delta,
            epsilon,
            c_hat: None,
            c_tilde: None,
            sigma: None,
        })
    }

    pub fn with_measured(mut self, c_hat: f64, c_tilde: f64) -> Self {
        self.c_hat = Some(c_hat);
        self.c_tilde = Some(c_tilde);
        self
    }

    /// `min(nu lambda1 / 2, delta / 2)`.
    pub fn delta0(&self) -> f64 {
        (0.5 * self.nu * self.lambda1).min(0.5 * self.delta)
    }

    /// `min(nu lambda1 / 8, delta / 2)`.
    pub fn delta2(&self) -> f64 {
        (0.125 * self.nu * self.lambda1).min(0.5 * self.delta)
    }

    fn product(&self) -> Result<f64> {
        let c_hat = self.c_hat.ok_or(Error::MissingConstant("c_hat"))?;
        let c_tilde = self.c_tilde.ok_or(Error::MissingConstant("c_tilde"))?;
        Ok(c_hat * c_tilde)
    }

    /// `2 (c_hat c_tilde)^2 / nu`.
    pub fn c0(&self) -> Result<f64> {
        let p = self.product()?;
        Ok(2.0 * p * p / self.nu)
    }

    /// The two stated values of `c5`: `3456 (c_hat c_tilde)^4 / nu^3` and
    /// `11664 (c_hat c_tilde)^4 / nu^3`.
    pub fn c5_candidates(&self) -> Result<(f64, f64)> {
        let p4 = self.product()?.powi(4);
        let nu3 = self.nu.powi(3);
        Ok((3456.0 * p4 / nu3, 11664.0 * p4 / nu3))
    }

    /// The larger `c5` candidate.
    pub fn c5(&self) -> Result<f64> {
        let (a, b) = self.c5_candidates()?;
        Ok(a.max(b))
    }

    pub fn entries(&self) -> Vec<LedgerEntry> {
        let mut out = Vec::new();
        let mut push = |name: &str, value: f64, provenance| {
            out.push(LedgerEntry {
                name: name.to_string(),
                value,
                provenance,
            })
        };
        push("nu", self.nu, Provenance::Input);
        push("lambda1", self.lambda1, Provenance::Input);
        push("delta", self.delta, Provenance::Input);
        push("epsilon", self.epsilon, Provenance::Input);
        push("delta0", self.delta0(), Provenance::Derived);
        push("delta2", self.delta2(), Provenance::Derived);
        if let Some(c) = self.c_hat {
            push("c_hat", c, Provenance::Measured);
        }
        if let Some(c) = self.c_tilde {
            push("c_tilde", c, Provenance::Measured);
        }
        if let (Ok(c0), Ok((lo, hi))) = (self.c0(), self.c5_candidates()) {
            push("c0", c0, Provenance::Derived);
            push("c5_section", lo, Provenance::Derived);
            push("c5_split", hi, Provenance::Derived);
            push("c5", lo.max(hi), Provenance::Derived);
        }
        if let Some(s) = self.sigma {
            push("sigma", s, Provenance::Derived);
        }
        out
    }
}

/// `1.1 max(c0 eps^2 / (2 delta0), c5 eps^4 / (2 delta0), delta0)`.
pub fn choose_sigma(ledger: &ConstantsLedger, epsilon: f64) -> Result<f64> {
    let d0 = ledger.delta0();
    let e2 = epsilon * epsilon;
    let a = ledger.c0()? * e2 / (2.0 * d0);
    let b = ledger.c5()? * e2 * e2 / (2.0 * d0);
    Ok(1.1 * a.max(b).max(d0))
}
