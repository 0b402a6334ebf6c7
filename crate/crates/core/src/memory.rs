//! Fading-memory kernel, past-history variable and memory convolution.
//!
//! The history `eta^t(s) = int_0^s u(t - r) dr` is sampled on a geometric
//! grid of ages `s_1 < ... < s_m` (with the implied boundary value
//! `eta(0) = 0`). Integrals against the kernel `mu` use product-integration
//! weights: the piecewise interpolant of `eta` is integrated exactly against
//! `mu`, and the tail beyond `s_m` is closed with `eta(s) = eta(s_m)`.

use std::io::{Read, Write};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::spaces::{read_f64, read_u32, Space, SpectralField, SpectralGrid};

/// Shape of the memory kernel `mu = -g'`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelForm {
    /// `g(s) = delta exp(-delta s)`, `mu(s) = delta^2 exp(-delta s)`.
    Exponential,
    /// `mu(s) = (1 + s)^-p`, `p > 1`. Not Dafermos for any `delta > 0`;
    /// kept to exercise the admissibility check.
    InversePower { exponent: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelSpec {
    delta: f64,
    form: KernelForm,
    scale: f64,
}

impl KernelSpec {
    /// Exponential kernel with Dafermos rate `delta`.
    pub fn exponential(delta: f64) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(invalid("delta", format!("must be positive, got {delta}")));
        }
        Ok(Self {
            delta,
            form: KernelForm::Exponential,
            scale: 1.0,
        })
    }

    pub fn inverse_power(delta: f64, exponent: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(invalid("delta", format!("must be positive, got {delta}")));
        }
        if !(exponent > 1.0) {
            return Err(invalid("exponent", "must exceed 1 for a summable kernel"));
        }
        Ok(Self {
            delta,
            form: KernelForm::InversePower { exponent },
            scale: 1.0,
        })
    }

    /// The same kernel multiplied by `alpha > 0`.
    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            scale: self.scale * alpha,
            ..*self
        }
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn form(&self) -> KernelForm {
        self.form
    }

    pub fn mu(&self, s: f64) -> f64 {
        self.scale
            * match self.form {
                KernelForm::Exponential => self.delta * self.delta * (-self.delta * s).exp(),
                KernelForm::InversePower { exponent } => (1.0 + s).powf(-exponent),
            }
    }

    pub fn mu_prime(&self, s: f64) -> f64 {
        self.scale
            * match self.form {
                KernelForm::Exponential => -self.delta.powi(3) * (-self.delta * s).exp(),
                KernelForm::InversePower { exponent } => -exponent * (1.0 + s).powf(-exponent - 1.0),
            }
    }

    /// Relaxation function `g(s) = int_s^inf mu`.
    pub fn g(&self, s: f64) -> f64 {
        self.scale
            * match self.form {
                KernelForm::Exponential => self.delta * (-self.delta * s).exp(),
                KernelForm::InversePower { exponent } => (1.0 + s).powf(1.0 - exponent) / (exponent - 1.0),
            }
    }

    /// `kappa = int_0^inf mu`.
    pub fn kappa(&self) -> f64 {
        self.g(0.0)
    }

    /// `int_a^inf mu`.
    fn tail_mass(&self, a: f64) -> f64 {
        self.g(a)
    }

    /// `mu'(s_j) + delta mu(s_j)` at every node.
    pub fn check_dafermos(&self, nodes: &[f64]) -> Vec<f64> {
        nodes
            .iter()
            .map(|&s| self.mu_prime(s) + self.delta * self.mu(s))
            .collect()
    }

    /// True when every margin is at most `1e-14 mu(s_j)`.
    pub fn is_dafermos(&self, nodes: &[f64]) -> bool {
        self.check_dafermos(nodes)
            .iter()
            .zip(nodes)
            .all(|(&m, &s)| m <= 1e-14 * self.mu(s))
    }
}

/// Interpolation used by the semi-Lagrangian shift and by the quadrature.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgeInterpolation {
    Linear,
    #[default]
    Cubic,
}

/// Scheme for the transport `d_t eta = -d_s eta + u`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportScheme {
    /// Shift along characteristics and interpolate at the fixed ages.
    #[default]
    SemiLagrangian,
    /// First-order upwind differences, explicit and sub-cycled.
    Upwind,
    /// Third-order upwind-biased differences in age, integrated exactly in
    /// time by a precomputed matrix exponential. Its age error does not
    /// depend on the step, unlike the interpolation error of the shift.
    Exponential,
}

/// Exact one-step solution operator of the age-discretized transport.
#[derive(Debug)]
struct Propagator {
    dt: f64,
    rows: Vec<Vec<(usize, f64)>>,
    gains: Vec<f64>,
}

/// Ages, quadrature weights and transport options of a history grid.
#[derive(Clone, Debug)]
pub struct AgeGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    interpolation: AgeInterpolation,
    transport: TransportScheme,
    propagators: Arc<Mutex<Vec<Arc<Propagator>>>>,
}

pub const DEFAULT_AGE_NODES: usize = 64;

impl AgeGrid {
    /// Geometric ages `s_j = s_min r^(j-1)`, `j = 1..=m`, with `s_m = s_max`.
    pub fn geometric(
        kernel: &KernelSpec,
        s_min: f64,
        s_max: f64,
        m: usize,
        interpolation: AgeInterpolation,
        transport: TransportScheme,
    ) -> Result<Self> {
        if !(s_min > 0.0) || !(s_max > s_min) {
            return Err(invalid(
                "s_nodes",
                format!("need 0 < s_min < s_max, got {s_min}, {s_max}"),
            ));
        }
        if m < 4 {
            return Err(invalid("s_nodes", "need at least 4 ages"));
        }
        let ratio = (s_max / s_min).powf(1.0 / (m - 1) as f64);
        let mut nodes: Vec<f64> = (0..m).map(|j| s_min * ratio.powi(j as i32)).collect();
        nodes[m - 1] = s_max;
        Self::with_nodes(kernel, nodes, interpolation, transport)
    }

    /// Uniform ages `k h` up to the point where a geometric continuation
    /// to `s_max` has gaps of at least `h`, then geometric. With `h = dt`
    /// the semi-Lagrangian shift maps uniform ages onto each other and never
    /// crosses more than one gap further out.
    pub fn graded(
        kernel: &KernelSpec,
        spacing: f64,
        s_max: f64,
        m: usize,
        interpolation: AgeInterpolation,
        transport: TransportScheme,
    ) -> Result<Self> {
        if !(spacing > 0.0) || !(s_max > spacing) {
            return Err(invalid(
                "s_nodes",
                format!("need 0 < spacing < s_max, got {spacing}, {s_max}"),
            ));
        }
        if m < 4 {
            return Err(invalid("s_nodes", "need at least 4 ages"));
        }
        for uniform in 1..m {
            let start = uniform as f64 * spacing;
            if start >= s_max {
                break;
            }
            let ratio = (s_max / start).powf(1.0 / (m - uniform) as f64);
            if start * (ratio - 1.0) >= spacing {
                let mut nodes: Vec<f64> = (1..=uniform).map(|k| k as f64 * spacing).collect();
                nodes.extend((1..=m - uniform).map(|j| start * ratio.powi(j as i32)));
                nodes[m - 1] = s_max;
                return Self::with_nodes(kernel, nodes, interpolation, transport);
            }
        }
        Err(invalid(
            "s_nodes",
            format!("{m} ages cannot reach {s_max} with gaps of at least {spacing}"),
        ))
    }

    /// Default layout: graded ages with spacing `dt`, `s_max = 20 / delta`, 64 ages.
    pub fn standard(kernel: &KernelSpec, dt: f64) -> Result<Self> {
        Self::graded(
            kernel,
            dt,
            20.0 / kernel.delta(),
            DEFAULT_AGE_NODES,
            AgeInterpolation::default(),
            TransportScheme::default(),
        )
    }

    pub fn with_nodes(
        kernel: &KernelSpec,
        nodes: Vec<f64>,
        interpolation: AgeInterpolation,
        transport: TransportScheme,
    ) -> Result<Self> {
        if nodes.len() < 4 {
            return Err(invalid("s_nodes", "need at least 4 ages"));
        }
        if !(nodes[0] > 0.0) || nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid(
                "s_nodes",
                "ages must be positive and strictly increasing",
            ));
        }
        let weights = product_weights(kernel, &nodes, interpolation);
        Ok(Self {
            nodes,
            weights,
            interpolation,
            transport,
            propagators: Arc::new(Mutex::new(Vec::new())),
        })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn interpolation(&self) -> AgeInterpolation {
        self.interpolation
    }

    pub fn transport(&self) -> TransportScheme {
        self.transport
    }

    /// See [`HistoryState::transport_courant`].
    pub fn transport_courant(&self, dt: f64) -> f64 {
        let mut worst = dt / self.nodes[0];
        for w in self.nodes.windows(2) {
            worst = worst.max(dt / (w[1] - w[0]));
        }
        worst
    }

    fn upwind_substeps(&self, dt: f64) -> (usize, f64) {
        let n = self.transport_courant(dt).ceil().max(1.0) as usize;
        (n, dt / n as f64)
    }

    /// Response of each node to a unit inflow over one transport step:
    /// `advance(eta, u) = shifted(eta) + gains_j u`.
    pub fn transport_gains(&self, dt: f64) -> Vec<f64> {
        match self.transport {
            TransportScheme::Exponential => self.propagator(dt).gains.clone(),
            TransportScheme::SemiLagrangian => self.nodes.iter().map(|&s| s.min(dt)).collect(),
            TransportScheme::Upwind => {
                let (substeps, h) = self.upwind_substeps(dt);
                let mut g = vec![0.0; self.nodes.len()];
                for _ in 0..substeps {
                    let prev = g.clone();
                    for j in 0..g.len() {
                        let ds = if j == 0 {
                            self.nodes[0]
                        } else {
                            self.nodes[j] - self.nodes[j - 1]
                        };
                        let c = h / ds;
                        let left = if j == 0 { 0.0 } else { prev[j - 1] };
                        g[j] = (1.0 - c) * prev[j] + c * left + h;
                    }
                }
                g
            }
        }
    }

    fn propagator(&self, dt: f64) -> Arc<Propagator> {
        let mut cache = self.propagators.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(p) = cache.iter().find(|p| p.dt.to_bits() == dt.to_bits()) {
            return Arc::clone(p);
        }
        let p = Arc::new(self.build_propagator(dt));
        cache.push(Arc::clone(&p));
        p
    }

    /// Rows of `D` with `(D eta)_j ~ d_s eta(s_j)`, on ages `j - 1` and the
    /// boundary `eta(0) = 0`: two points behind, one ahead where available.
    fn derivative_rows(&self) -> Vec<Vec<(usize, f64)>> {
        let m = self.nodes.len();
        let at = |k: usize| self.extended(k);
        (1..=m)
            .map(|j| {
                let hi = (j + 1).min(m).max(3);
                let lo = hi - 3;
                let x = at(j);
                (lo..=hi)
                    .filter(|&k| k != 0)
                    .map(|k| {
                        let xk = at(k);
                        let mut d = 0.0;
                        for l in (lo..=hi).filter(|&l| l != k) {
                            let mut term = 1.0 / (xk - at(l));
                            for p in (lo..=hi).filter(|&p| p != k && p != l) {
                                term *= (x - at(p)) / (xk - at(p));
                            }
                            d += term;
                        }
                        (k - 1, d)
                    })
                    .collect()
            })
            .collect()
    }

    fn build_propagator(&self, dt: f64) -> Propagator {
        let m = self.nodes.len();
        if self.transport != TransportScheme::Exponential {
            let rows = self
                .nodes
                .iter()
                .map(|&s| {
                    if s > dt {
                        self.stencil(s - dt)
                            .into_iter()
                            .map(|(k, w)| (k - 1, w))
                            .collect()
                    } else {
                        Vec::new()
                    }
                })
                .collect();
            let gains = self.nodes.iter().map(|&s| s.min(dt)).collect();
            return Propagator { dt, rows, gains };
        }
        // exp of [[-D dt, 1 dt], [0, 0]] = [[P, g], [0, 1]].
        let size = m + 1;
        let mut a = vec![0.0; size * size];
        for (j, row) in self.derivative_rows().into_iter().enumerate() {
            for (k, d) in row {
                a[j * size + k] = -d * dt;
            }
            a[j * size + m] = dt;
        }
        let e = expm(&a, size);
        let rows = (0..m)
            .map(|j| {
                (0..m)
                    .filter_map(|k| {
                        let v = e[j * size + k];
                        (v.abs() > 1e-18).then_some((k, v))
                    })
                    .collect()
            })
            .collect();
        let gains = (0..m).map(|j| e[j * size + m]).collect();
        Propagator { dt, rows, gains }
    }

    /// Node abscissae including the boundary age 0 at index 0.
    fn extended(&self, i: usize) -> f64 {
        if i == 0 {
            0.0
        } else {
            self.nodes[i - 1]
        }
    }

    /// Interpolation stencil at age `x` in extended indexing (0 is the
    /// boundary, where `eta = 0`). Ages beyond `s_m` are held constant.
    fn stencil(&self, x: f64) -> Vec<(usize, f64)> {
        let m = self.nodes.len();
        if x <= 0.0 {
            return Vec::new();
        }
        if x >= self.nodes[m - 1] {
            return vec![(m, 1.0)];
        }
        // Interval [e(i), e(i+1)] containing x.
        let i = self.nodes.partition_point(|&s| s <= x);
        let at = |k: usize| self.extended(k);
        let linear = || lagrange_weights(x, i, i + 1, at);
        let weights = match self.interpolation {
            AgeInterpolation::Linear => linear(),
            AgeInterpolation::Cubic => {
                let hi = (i.saturating_sub(1) + 3).min(m);
                let cubic = lagrange_weights(x, hi - 3, hi, at);
                // Where ages are packed tighter than the shift, the cubic
                // stencil extrapolates from a cluster; fall back to linear.
                let lebesgue: f64 = cubic.iter().map(|(_, w)| w.abs()).sum();
                if lebesgue <= MAX_CUBIC_LEBESGUE {
                    cubic
                } else {
                    linear()
                }
            }
        };
        weights.into_iter().filter(|&(k, w)| k != 0 && w != 0.0).collect()
    }
}

const MAX_CUBIC_LEBESGUE: f64 = 1.25;

fn lagrange_weights(x: f64, lo: usize, hi: usize, at: impl Fn(usize) -> f64) -> Vec<(usize, f64)> {
    (lo..=hi)
        .map(|k| {
            let xk = at(k);
            let w = (lo..=hi)
                .filter(|&l| l != k)
                .map(|l| (x - at(l)) / (xk - at(l)))
                .product::<f64>();
            (k, w)
        })
        .collect()
}

/// Dense matrix exponential by scaling and squaring with a Taylor sum.
fn expm(a: &[f64], n: usize) -> Vec<f64> {
    let norm = (0..n)
        .map(|c| (0..n).map(|r| a[r * n + c].abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm > 0.25 {
        (norm / 0.25).log2().ceil() as i32
    } else {
        0
    };
    let scale = 0.5f64.powi(squarings);
    let x: Vec<f64> = a.iter().map(|v| v * scale).collect();
    let matmul = |p: &[f64], q: &[f64]| {
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let pik = p[i * n + k];
                if pik != 0.0 {
                    for j in 0..n {
                        out[i * n + j] += pik * q[k * n + j];
                    }
                }
            }
        }
        out
    };
    let mut sum = vec![0.0; n * n];
    let mut term = vec![0.0; n * n];
    for i in 0..n {
        sum[i * n + i] = 1.0;
        term[i * n + i] = 1.0;
    }
    for k in 1..=18 {
        term = matmul(&term, &x);
        term.iter_mut().for_each(|v| *v /= k as f64);
        sum.iter_mut().zip(&term).for_each(|(s, t)| *s += t);
    }
    for _ in 0..squarings {
        sum = matmul(&sum, &sum);
    }
    sum
}

/// Gauss-Legendre abscissae and weights on [-1, 1].
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

/// `w_j = int_0^inf mu(s) phi_j(s) ds` where `phi_j` are the cardinal
/// functions of the piecewise interpolant through `(0, 0), (s_j, eta_j)`.
fn product_weights(kernel: &KernelSpec, nodes: &[f64], interpolation: AgeInterpolation) -> Vec<f64> {
    let m = nodes.len();
    let at = |k: usize| if k == 0 { 0.0 } else { nodes[k - 1] };
    let gl = gauss_legendre(24);
    let mut weights = vec![0.0; m];
    let panels: Vec<(usize, usize)> = match interpolation {
        AgeInterpolation::Linear => (0..m).map(|i| (i, i + 1)).collect(),
        // Linear ramp on [0, s_1], then quadratic panels over pairs of
        // intervals, closed by a linear panel when the count is odd. The ramp
        // is kept separate because s_1 is much wider than s_2 - s_1, which
        // would make a quadratic weight negative.
        AgeInterpolation::Cubic => {
            let mut p = vec![(0, 1)];
            let mut i = 1;
            while i + 2 <= m {
                p.push((i, i + 2));
                i += 2;
            }
            if i < m {
                p.push((i, i + 1));
            }
            p
        }
    };
    let panel_weights = |lo: usize, hi: usize| {
        let (a, b) = (at(lo), at(hi));
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        let mut local = vec![0.0; hi - lo + 1];
        for &(xi, wi) in &gl {
            let s = mid + half * xi;
            let mu = kernel.mu(s) * wi * half;
            for (k, l) in lagrange_weights(s, lo, hi, at) {
                local[k - lo] += mu * l;
            }
        }
        local
    };
    for (lo, hi) in panels {
        let mut local = vec![(lo, panel_weights(lo, hi))];
        // Over wide panels a steep kernel can drive a quadratic weight
        // negative; such panels are split into linear ones.
        if local[0].1.iter().any(|&w| w < 0.0) {
            local = (lo..hi).map(|i| (i, panel_weights(i, i + 1))).collect();
        }
        for (start, ws) in local {
            for (offset, w) in ws.into_iter().enumerate() {
                let k = start + offset;
                if k > 0 {
                    weights[k - 1] += w;
                }
            }
        }
    }
    weights[m - 1] += kernel.tail_mass(nodes[m - 1]);
    weights
}

/// Past-history variable on an [`AgeGrid`]; one divergence-free field per age.
#[derive(Clone, Debug)]
pub struct HistoryState {
    ages: Arc<AgeGrid>,
    values: Vec<SpectralField>,
}

impl HistoryState {
    pub fn zeros(ages: &Arc<AgeGrid>, grid: &Arc<SpectralGrid>) -> Self {
        Self {
            ages: Arc::clone(ages),
            values: vec![SpectralField::zeros(grid); ages.len()],
        }
    }

    pub fn from_values(ages: &Arc<AgeGrid>, values: Vec<SpectralField>) -> Result<Self> {
        if values.len() != ages.len() {
            return Err(Error::SizeMismatch {
                expected: ages.len(),
                got: values.len(),
            });
        }
        Ok(Self {
            ages: Arc::clone(ages),
            values,
        })
    }

    /// `eta_0(s_j) = int_0^{s_j} rho(r) dr` by composite trapezoid with
    /// `substeps` panels per age interval.
    pub fn from_past_velocity(
        ages: &Arc<AgeGrid>,
        grid: &Arc<SpectralGrid>,
        rho: impl Fn(f64) -> SpectralField,
        substeps: usize,
    ) -> Self {
        let substeps = substeps.max(1);
        let mut acc = SpectralField::zeros(grid);
        let mut prev_s = 0.0;
        let mut prev_rho = rho(0.0);
        let mut values = Vec::with_capacity(ages.len());
        for &s_j in ages.nodes() {
            let h = (s_j - prev_s) / substeps as f64;
            for k in 1..=substeps {
                let s = if k == substeps { s_j } else { prev_s + h * k as f64 };
                let r = rho(s);
                acc.add_scaled(0.5 * h, &prev_rho);
                acc.add_scaled(0.5 * h, &r);
                prev_rho = r;
            }
            prev_s = s_j;
            values.push(acc.clone());
        }
        Self {
            ages: Arc::clone(ages),
            values,
        }
    }

    /// Samples a closed-form history `eta(s)` at the ages.
    pub fn sample(ages: &Arc<AgeGrid>, eta: impl Fn(f64) -> SpectralField) -> Self {
        Self {
            ages: Arc::clone(ages),
            values: ages.nodes().iter().map(|&s| eta(s)).collect(),
        }
    }

    pub fn ages(&self) -> &Arc<AgeGrid> {
        &self.ages
    }

    pub fn values(&self) -> &[SpectralField] {
        &self.values
    }

    pub fn grid(&self) -> &Arc<SpectralGrid> {
        self.values[0].grid()
    }

    /// `int_0^inf mu(s) A eta(s) ds` by the product quadrature.
    pub fn memory_convolution(&self) -> SpectralField {
        let mut m = self.weighted_sum();
        m.mul_modes(self.grid().ksq());
        m
    }

    /// `int_0^inf mu(s) eta(s) ds`; the convolution is `A` of this.
    pub fn weighted_sum(&self) -> SpectralField {
        let mut acc = SpectralField::zeros(self.grid());
        for (w, eta) in self.ages.weights().iter().zip(&self.values) {
            acc.add_scaled(*w, eta);
        }
        acc
    }

    /// Evolves `d_t eta = -d_s eta + u` over `dt` with `u` frozen.
    ///
    /// Semi-Lagrangian: `eta(s) <- eta(s - dt) + dt u`, and `eta(s) = s u`
    /// for `s <= dt`. Upwind: explicit first-order steps, sub-cycled to the
    /// CFL bound. Both are linear in `(eta, u)` and split as
    /// `shifted(dt) + gains_j u`.
    pub fn advance(&self, u: &SpectralField, dt: f64) -> HistoryState {
        let mut out = self.shifted(dt);
        out.add_inflow(&self.ages.transport_gains(dt), u);
        out
    }

    /// `values[j] += gains[j] u`.
    pub fn add_inflow(&mut self, gains: &[f64], u: &SpectralField) {
        for (eta, &g) in self.values.iter_mut().zip(gains) {
            eta.add_scaled(g, u);
        }
    }

    pub(crate) fn add_inflow_banded(&mut self, gains: &[f64], u: &SpectralField) {
        for (eta, &g) in self.values.iter_mut().zip(gains) {
            eta.add_scaled_banded(g, u);
        }
    }

    pub(crate) fn weighted_sum_banded(&self) -> SpectralField {
        let mut acc = SpectralField::zeros(self.grid());
        for (w, eta) in self.ages.weights().iter().zip(&self.values) {
            acc.add_scaled_banded(*w, eta);
        }
        acc
    }

    pub fn is_band_limited(&self) -> bool {
        self.values.iter().all(SpectralField::is_band_limited)
    }

    /// Zeroes every mode outside the dealias mask at every age.
    pub fn dealias(&mut self) {
        for eta in &mut self.values {
            eta.dealias();
        }
    }

    /// Transport over `dt` with zero inflow.
    pub fn shifted(&self, dt: f64) -> HistoryState {
        let mut out = HistoryState::zeros(&self.ages, self.grid());
        self.shift_into(dt, &mut out);
        out
    }

    /// [`shifted`](Self::shifted) into `out`, reusing its storage.
    pub fn shift_into(&self, dt: f64, out: &mut HistoryState) {
        self.shift_into_impl(dt, out, false);
    }

    /// [`shift_into`](Self::shift_into) for band-limited histories, touching
    /// only the dealiased modes of `out`.
    pub(crate) fn shift_into_banded(&self, dt: f64, out: &mut HistoryState) {
        self.shift_into_impl(dt, out, true);
    }

    fn shift_into_impl(&self, dt: f64, out: &mut HistoryState, banded: bool) {
        assert!(Arc::ptr_eq(&self.ages, &out.ages) || self.ages.nodes == out.ages.nodes);
        match self.ages.transport() {
            TransportScheme::SemiLagrangian | TransportScheme::Exponential => {
                let p = self.ages.propagator(dt);
                let mut terms = Vec::new();
                for (row, eta) in p.rows.iter().zip(out.values.iter_mut()) {
                    terms.clear();
                    terms.extend(row.iter().map(|&(k, w)| (w, &self.values[k])));
                    if banded {
                        eta.set_combination_banded(&terms);
                    } else {
                        eta.set_combination(&terms);
                    }
                }
            }
            TransportScheme::Upwind => {
                let (substeps, h) = self.ages.upwind_substeps(dt);
                let nodes = self.ages.nodes();
                let mut current = self.values.clone();
                for _ in 0..substeps {
                    let mut next = Vec::with_capacity(nodes.len());
                    for j in 0..nodes.len() {
                        let ds = if j == 0 { nodes[0] } else { nodes[j] - nodes[j - 1] };
                        let c = h / ds;
                        let mut v = current[j].scaled(1.0 - c);
                        if j > 0 {
                            v.add_scaled(c, &current[j - 1]);
                        }
                        next.push(v);
                    }
                    current = next;
                }
                out.values = current;
            }
        }
    }

    /// Largest `dt / (s_j - s_{j-1})`. Above 1 the semi-Lagrangian shift
    /// crosses several cells and the upwind scheme sub-cycles.
    pub fn transport_courant(&self, dt: f64) -> f64 {
        self.ages.transport_courant(dt)
    }

    fn weighted_norm_sq(&self, space: Space) -> f64 {
        self.ages
            .weights()
            .iter()
            .zip(&self.values)
            .map(|(w, eta)| w * eta.norm_sq(space))
            .sum()
    }

    pub fn norm_m_sq(&self) -> f64 {
        self.weighted_norm_sq(Space::V)
    }

    /// `||eta||_M = (int mu ||eta(s)||_V^2 ds)^(1/2)`.
    pub fn norm_m(&self) -> f64 {
        self.norm_m_sq().sqrt()
    }

    /// Same with the `W` norm per age.
    pub fn norm_m1(&self) -> f64 {
        self.weighted_norm_sq(Space::W).sqrt()
    }

    /// `<eta, xi>_M`.
    pub fn inner_m(&self, other: &HistoryState) -> f64 {
        self.ages
            .weights()
            .iter()
            .zip(self.values.iter().zip(&other.values))
            .map(|(w, (a, b))| w * a.inner_unchecked(b, Space::V))
            .sum()
    }

    /// `<eta, u>_M` for a field constant in age.
    pub fn inner_m_const(&self, u: &SpectralField) -> f64 {
        self.ages
            .weights()
            .iter()
            .zip(&self.values)
            .map(|(w, a)| w * a.inner_unchecked(u, Space::V))
            .sum()
    }

    pub fn add_scaled(&mut self, a: f64, other: &HistoryState) {
        for (x, y) in self.values.iter_mut().zip(&other.values) {
            x.add_scaled(a, y);
        }
    }

    pub fn sub(&self, other: &HistoryState) -> HistoryState {
        let mut out = self.clone();
        out.add_scaled(-1.0, other);
        out
    }

    pub fn add(&self, other: &HistoryState) -> HistoryState {
        let mut out = self.clone();
        out.add_scaled(1.0, other);
        out
    }

    pub fn scaled(&self, a: f64) -> HistoryState {
        Self {
            ages: Arc::clone(&self.ages),
            values: self.values.iter().map(|v| v.scaled(a)).collect(),
        }
    }

    pub fn divergence_max(&self) -> f64 {
        self.values
            .iter()
            .map(SpectralField::divergence_max)
            .fold(0.0, f64::max)
    }

    pub fn bit_identical(&self, other: &HistoryState) -> bool {
        self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| fields_bit_identical(a, b))
    }

    /// Binary record: magic, count, ages, weights, then one field record per age.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(b"VHST")?;
        w.write_all(&(self.values.len() as u32).to_le_bytes())?;
        for &s in self.ages.nodes() {
            w.write_all(&s.to_le_bytes())?;
        }
        for &q in self.ages.weights() {
            w.write_all(&q.to_le_bytes())?;
        }
        for v in &self.values {
            v.write_to(w)?;
        }
        Ok(())
    }

    /// Reads a history record; the stored ages and weights must match `ages`.
    pub fn read_from<R: Read>(r: &mut R, ages: &Arc<AgeGrid>, grid: &Arc<SpectralGrid>) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"VHST" {
            return Err(Error::Format("bad history magic".into()));
        }
        let m = read_u32(r)? as usize;
        if m != ages.len() {
            return Err(Error::Format(format!(
                "history has {m} ages, expected {}",
                ages.len()
            )));
        }
        for expected in ages.nodes().iter().chain(ages.weights()) {
            let got = read_f64(r)?;
            if got.to_bits() != expected.to_bits() {
                return Err(Error::Format(
                    "history ages or weights differ from the grid".into(),
                ));
            }
        }
        let values = (0..m)
            .map(|_| SpectralField::read_from(r, Some(grid)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_values(ages, values)
    }
}

pub(crate) fn fields_bit_identical(a: &SpectralField, b: &SpectralField) -> bool {
    let same = |x: &[num_complex::Complex64], y: &[num_complex::Complex64]| {
        x.iter()
            .zip(y)
            .all(|(p, q)| p.re.to_bits() == q.re.to_bits() && p.im.to_bits() == q.im.to_bits())
    };
    same(a.c1(), b.c1()) && same(a.c2(), b.c2())
}

/// Stored velocity samples `u(t_0), ..., u(t_n)` at spacing `dt`, read as a
/// piecewise-linear signal.
#[derive(Clone, Debug)]
pub struct VelocityRecord {
    pub dt: f64,
    pub samples: Vec<SpectralField>,
}

impl VelocityRecord {
    pub fn new(dt: f64) -> Self {
        Self {
            dt,
            samples: Vec::new(),
        }
    }

    pub fn push(&mut self, u: SpectralField) {
        self.samples.push(u);
    }

    pub fn duration(&self) -> f64 {
        self.dt * self.samples.len().saturating_sub(1) as f64
    }
}

/// Reference history by direct trapezoid integration of the recorded past:
/// `eta(s) = int_0^min(s,t) u(t - r) dr + eta_0(s - t)` for the latest time
/// `t`, where `prior` is the initial history `eta_0` (zero when absent).
pub fn brute_force_history(
    record: &VelocityRecord,
    ages: &Arc<AgeGrid>,
    grid: &Arc<SpectralGrid>,
    prior: Option<&dyn Fn(f64) -> SpectralField>,
) -> HistoryState {
    let n = record.samples.len();
    let dt = record.dt;
    let t = record.duration();
    let values = ages
        .nodes()
        .iter()
        .map(|&s| {
            let mut acc = SpectralField::zeros(grid);
            if n >= 2 {
                let reach = s.min(t);
                // Lag r runs backward from the newest sample.
                let full = ((reach / dt) + 1e-9).floor() as usize;
                let full = full.min(n - 1);
                for k in 0..full {
                    let a = &record.samples[n - 1 - k];
                    let b = &record.samples[n - 2 - k];
                    acc.add_scaled(0.5 * dt, a);
                    acc.add_scaled(0.5 * dt, b);
                }
                let rest = reach - full as f64 * dt;
                if rest > 0.0 && full + 1 < n {
                    let a = &record.samples[n - 1 - full];
                    let b = &record.samples[n - 2 - full];
                    let frac = rest / dt;
                    // int_0^rest of the linear segment from a to b.
                    acc.add_scaled(rest * (1.0 - 0.5 * frac), a);
                    acc.add_scaled(rest * 0.5 * frac, b);
                }
            }
            if s > t {
                if let Some(eta0) = prior {
                    acc.add_scaled(1.0, &eta0(s - t));
                }
            }
            acc
        })
        .collect();
    HistoryState {
        ages: Arc::clone(ages),
        values,
    }
}

/// Closed-form memory for the exponential kernel.
///
/// With `mu' = -delta mu`, `m(t) = int mu(s) eta^t(s) ds` obeys
/// `m' = -delta m + kappa u`, so the convolution is `A m`. Each step
/// integrates this ODE exactly with `u` frozen over the step.
#[derive(Clone, Debug)]
pub struct ExponentialMemoryOracle {
    delta: f64,
    kappa: f64,
    m: SpectralField,
}

impl ExponentialMemoryOracle {
    pub fn new(kernel: &KernelSpec, m0: SpectralField) -> Result<Self> {
        if kernel.form() != KernelForm::Exponential {
            return Err(invalid(
                "kernel",
                "closed-form memory needs the exponential kernel",
            ));
        }
        Ok(Self {
            delta: kernel.delta(),
            kappa: kernel.kappa(),
            m: m0,
        })
    }

    pub fn step(&mut self, u: &SpectralField, dt: f64) {
        let decay = (-self.delta * dt).exp();
        self.m.scale(decay);
        self.m.add_scaled(self.kappa * (1.0 - decay) / self.delta, u);
    }

    pub fn memory(&self) -> &SpectralField {
        &self.m
    }

    pub fn convolution(&self) -> SpectralField {
        self.m.stokes_apply(2.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid() -> Arc<SpectralGrid> {
        SpectralGrid::new(2.0 * PI, 16).unwrap()
    }

    #[test]
    fn exponential_kernel_constants() {
        let k = KernelSpec::exponential(1.0).unwrap();
        assert_eq!(k.kappa(), 1.0);
        assert_eq!(k.mu(0.0), 1.0);
        assert!(KernelSpec::exponential(0.0).is_err());
        assert!(KernelSpec::exponential(-1.0).is_err());

        let k2 = KernelSpec::exponential(2.0).unwrap();
        assert_eq!(k2.kappa(), 2.0);
        // int g over [0, 40] by composite Simpson.
        let n = 40_000;
        let h = 40.0 / n as f64;
        let mut sum = k2.g(0.0) + k2.g(40.0);
        for i in 1..n {
            sum += if i % 2 == 1 { 4.0 } else { 2.0 } * k2.g(i as f64 * h);
        }
        assert!((sum * h / 3.0 - 1.0).abs() < 1e-8);
    }

    #[test]
    fn dafermos_margins() {
        let nodes: Vec<f64> = (0..50).map(|j| 0.01 * 1.2f64.powi(j)).collect();
        let k = KernelSpec::exponential(1.5).unwrap();
        let margins = k.check_dafermos(&nodes);
        for (m, s) in margins.iter().zip(&nodes) {
            assert!(m.abs() <= 1e-14 * k.mu(*s));
        }
        assert!(k.is_dafermos(&nodes));

        // mu = (1+s)^-2, delta = 1: margin (1+s)^-3 (s - 1), negative before s = 1.
        let p = KernelSpec::inverse_power(1.0, 2.0).unwrap();
        let margins = p.check_dafermos(&[0.0, 0.5, 2.0, 10.0]);
        assert!((margins[0] + 1.0).abs() < 1e-15);
        assert!(margins[1] < 0.0);
        assert!((margins[2] - 1.0 / 27.0).abs() < 1e-15);
        assert!(margins[3] > 0.0);
        assert!(!p.is_dafermos(&[0.0, 0.5, 2.0, 10.0]));

        let scaled = p.scaled(3.0).check_dafermos(&[2.0, 10.0]);
        assert!((scaled[0] - 3.0 * margins[2]).abs() < 1e-15);
        assert!((scaled[1] - 3.0 * margins[3]).abs() < 1e-15);
    }

    #[test]
    fn weights_are_positive_and_integrate_the_kernel() {
        let k = KernelSpec::exponential(1.0).unwrap();
        for interp in [AgeInterpolation::Linear, AgeInterpolation::Cubic] {
            let ages =
                AgeGrid::geometric(&k, 1e-3, 20.0, 64, interp, TransportScheme::SemiLagrangian).unwrap();
            assert!(ages.weights().iter().all(|&w| w > 0.0), "{interp:?}");
            // Constant-in-age data: exact except the [0, s_1] ramp.
            let total: f64 = ages.weights().iter().sum();
            assert!((total - k.kappa()).abs() < 1e-3);
            // Linear data eta(s) = s is reproduced exactly up to the tail rule.
            let first: f64 = ages.weights().iter().zip(ages.nodes()).map(|(w, s)| w * s).sum();
            assert!((first - 1.0).abs() < 1e-6, "{interp:?}: {first}");
        }
    }

    #[test]
    fn history_from_past_velocity() {
        let g = grid();
        let k = KernelSpec::exponential(1.0).unwrap();
        let ages = Arc::new(AgeGrid::standard(&k, 1e-3).unwrap());
        let u0 = SpectralField::random(&g, 4, 1.0);

        let zero = HistoryState::from_past_velocity(&ages, &g, |_| SpectralField::zeros(&g), 4);
        assert_eq!(zero.norm_m(), 0.0);

        let constant = HistoryState::from_past_velocity(&ages, &g, |_| u0.clone(), 4);
        for (s, eta) in ages.nodes().iter().zip(constant.values()) {
            assert!(eta.sub(&u0.scaled(*s)).norm(Space::H) <= 1e-12 * s * u0.norm(Space::H));
        }

        let wave = HistoryState::from_past_velocity(&ages, &g, |s| u0.scaled(s.cos()), 64);
        for (s, eta) in ages.nodes().iter().zip(wave.values()) {
            let err = eta.sub(&u0.scaled(s.sin())).norm(Space::H) / u0.norm(Space::H);
            assert!(err < 1e-3, "s = {s}: {err}");
        }
    }

    #[test]
    fn convolution_and_norms_of_constant_history() {
        let g = grid();
        let k = KernelSpec::exponential(1.0).unwrap();
        let ages = Arc::new(AgeGrid::standard(&k, 1e-3).unwrap());
        let u0 = SpectralField::random(&g, 8, 1.0);
        let eta = HistoryState::sample(&ages, |_| u0.clone());
        let conv = eta.memory_convolution();
        let expected = u0.stokes_apply(2.0).scaled(k.kappa());
        assert!(conv.sub(&expected).norm(Space::H) <= 1e-3 * expected.norm(Space::H));
        assert!(conv.divergence_max() <= 1e-12 * conv.norm(Space::V));
        let m2 = eta.norm_m_sq();
        assert!((m2 - k.kappa() * u0.norm_sq(Space::V)).abs() <= 1e-3 * m2);

        let zero = HistoryState::zeros(&ages, &g);
        assert_eq!(zero.memory_convolution().norm(Space::H), 0.0);
        assert_eq!(zero.norm_m(), 0.0);
        assert_eq!(zero.norm_m1(), 0.0);
    }

    #[test]
    fn m_norm_below_m1_norm() {
        let g = grid();
        let k = KernelSpec::exponential(1.0).unwrap();
        let ages = Arc::new(AgeGrid::standard(&k, 1e-2).unwrap());
        for seed in 0..10u64 {
            let fields: Vec<_> = (0..ages.len())
                .map(|j| SpectralField::random(&g, seed * 1000 + j as u64, 0.5))
                .collect();
            let eta = HistoryState::from_values(&ages, fields).unwrap();
            assert!(eta.norm_m() <= eta.norm_m1() / g.lambda1().sqrt() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn transport_of_constant_velocity() {
        let g = grid();
        let k = KernelSpec::exponential(1.0).unwrap();
        let u = SpectralField::random(&g, 2, 1.0);
        for transport in [
            TransportScheme::SemiLagrangian,
            TransportScheme::Upwind,
            TransportScheme::Exponential,
        ] {
            for interp in [AgeInterpolation::Linear, AgeInterpolation::Cubic] {
                let dt = 1e-2;
                let ages = Arc::new(AgeGrid::geometric(&k, dt, 20.0, 64, interp, transport).unwrap());
                let zero = HistoryState::zeros(&ages, &g);
                let still = zero.advance(&SpectralField::zeros(&g), dt);
                assert_eq!(still.norm_m(), 0.0);

                let steps = 100;
                let mut eta = zero;
                for _ in 0..steps {
                    eta = eta.advance(&u, dt);
                }
                assert!(eta.divergence_max() <= 1e-12 * eta.norm_m());
                let exact = HistoryState::sample(&ages, |s| u.scaled(s.min(steps as f64 * dt)));
                let err = eta.sub(&exact).norm_m() / exact.norm_m();
                let tol = match (transport, interp) {
                    (TransportScheme::SemiLagrangian, AgeInterpolation::Cubic) => 0.01,
                    (TransportScheme::SemiLagrangian, AgeInterpolation::Linear) => 0.05,
                    (TransportScheme::Upwind, _) => 0.05,
                    (TransportScheme::Exponential, _) => 0.01,
                };
                assert!(err < tol, "{transport:?}/{interp:?}: {err}");
            }
        }
    }

    #[test]
    fn exponential_transport_keeps_linear_profiles_and_decays() {
        let g = grid();
        let k = KernelSpec::exponential(1.0).unwrap();
        let u = SpectralField::random(&g, 5, 1.0);
        for dt in [1e-3, 1e-2, 0.1] {
            let ages = Arc::new(
                AgeGrid::graded(
                    &k,
                    dt,
                    20.0,
                    64,
                    AgeInterpolation::Cubic,
                    TransportScheme::Exponential,
                )
                .unwrap(),
            );
            // eta = s u is the steady profile for inflow u; the stencil is exact on it.
            let steady = HistoryState::sample(&ages, |s| u.scaled(s));
            let next = steady.advance(&u, dt);
            assert!(next.sub(&steady).norm_m() <= 1e-11 * steady.norm_m(), "dt {dt}");
            // Without inflow everything leaves through the far end.
            let mut eta = steady.clone();
            let steps = (40.0 / dt) as usize;
            for _ in 0..steps.min(4000) {
                eta = eta.shifted(dt);
            }
            assert!(eta.norm_m() <= steady.norm_m());
        }
    }

    #[test]
    fn brute_force_single_step() {
        let g = grid();
        let k = KernelSpec::exponential(1.0).unwrap();
        let ages = Arc::new(AgeGrid::standard(&k, 1e-3).unwrap());
        let u = SpectralField::random(&g, 3, 1.0);
        let mut rec = VelocityRecord::new(0.05);
        rec.push(u.clone());
        rec.push(u.clone());
        let eta = brute_force_history(&rec, &ages, &g, None);
        for (s, e) in ages.nodes().iter().zip(eta.values()) {
            let want = u.scaled(s.min(0.05));
            assert!(e.sub(&want).norm(Space::H) <= 1e-13 * u.norm(Space::H));
        }
        let empty = brute_force_history(&VelocityRecord::new(0.1), &ages, &g, None);
        assert_eq!(empty.norm_m(), 0.0);
    }

    #[test]
    fn oracle_relaxes_to_kappa_over_delta() {
        let g = grid();
        let k = KernelSpec::exponential(2.0).unwrap();
        let u = SpectralField::random(&g, 6, 1.0);
        let mut zero = ExponentialMemoryOracle::new(&k, SpectralField::zeros(&g)).unwrap();
        zero.step(&SpectralField::zeros(&g), 0.1);
        assert_eq!(zero.memory().norm(Space::H), 0.0);

        let mut o = ExponentialMemoryOracle::new(&k, SpectralField::zeros(&g)).unwrap();
        let dt = 0.01;
        let target = u.scaled(k.kappa() / k.delta());
        for n in 1..=500 {
            o.step(&u, dt);
            let t = n as f64 * dt;
            let err = o.memory().sub(&target).norm(Space::H) / target.norm(Space::H);
            assert!((err - (-k.delta() * t).exp()).abs() < 1e-12);
        }
        let p = KernelSpec::inverse_power(1.0, 2.0).unwrap();
        assert!(ExponentialMemoryOracle::new(&p, SpectralField::zeros(&g)).is_err());
    }

    #[test]
    fn history_record_round_trip() {
        let g = grid();
        let k = KernelSpec::exponential(1.0).unwrap();
        let ages = Arc::new(AgeGrid::standard(&k, 1e-2).unwrap());
        let u = SpectralField::random(&g, 1, 1.0);
        let eta = HistoryState::zeros(&ages, &g).advance(&u, 1e-2).advance(&u, 1e-2);
        let mut buf = Vec::new();
        eta.write_to(&mut buf).unwrap();
        let back = HistoryState::read_from(&mut buf.as_slice(), &ages, &g).unwrap();
        assert!(back.bit_identical(&eta));
    }

    /// Smooth prescribed signal vanishing at t = 0.
    // Starts from a constant past velocity u0 and joins it with two matching derivatives.
    fn driven(u0: &SpectralField, u1: &SpectralField, t: f64) -> SpectralField {
        let c = 1.0 - t.cos();
        let mut u = u0.clone();
        u.add_scaled(c * c, u1);
        u
    }

    #[test]
    fn semi_lagrangian_matches_brute_force_on_driven_signal() {
        let g = grid();
        let k = KernelSpec::exponential(1.0).unwrap();
        let dt = 1e-3;
        let u0 = SpectralField::random(&g, 21, 1.0);
        let u1 = SpectralField::random(&g, 22, 1.0);
        let prior = |s: f64| u0.scaled(s);
        let ages = Arc::new(
            AgeGrid::geometric(
                &k,
                dt,
                20.0,
                64,
                AgeInterpolation::Cubic,
                TransportScheme::SemiLagrangian,
            )
            .unwrap(),
        );
        let mut eta = HistoryState::sample(&ages, prior);
        // int_0^inf e^{-s} s ds = 1.
        let mut oracle = ExponentialMemoryOracle::new(&k, u0.clone()).unwrap();
        let mut rec = VelocityRecord::new(dt);
        rec.push(driven(&u0, &u1, 0.0));
        for n in 0..1000 {
            let a = driven(&u0, &u1, n as f64 * dt);
            let b = driven(&u0, &u1, (n + 1) as f64 * dt);
            let mean = a.add(&b).scaled(0.5);
            eta = eta.advance(&mean, dt);
            oracle.step(&mean, dt);
            rec.push(b);
        }
        let reference = brute_force_history(&rec, &ages, &g, Some(&prior));
        let err = eta.sub(&reference).norm_m() / reference.norm_m();
        let conv = eta.memory_convolution();
        let exact = oracle.convolution();
        let cerr = conv.sub(&exact).norm(Space::H) / exact.norm(Space::H);
        assert!(err <= 1e-3, "history error {err:e}");
        assert!(cerr <= 1e-3, "convolution error {cerr:e}");
    }

    #[test]
    fn banded_operations_match_full_ones_on_band_limited_histories() {
        let g = grid();
        let k = KernelSpec::exponential(1.0).unwrap();
        for transport in [
            TransportScheme::SemiLagrangian,
            TransportScheme::Upwind,
            TransportScheme::Exponential,
        ] {
            let ages =
                Arc::new(AgeGrid::graded(&k, 0.01, 20.0, 32, AgeInterpolation::Cubic, transport).unwrap());
            let eta = HistoryState::sample(&ages, |s| SpectralField::random(&g, 1, 1.0).scaled(s.sin()));
            let u = SpectralField::random(&g, 2, 1.0);
            assert!(eta.is_band_limited() && u.is_band_limited());
            let gains = ages.transport_gains(0.01);

            let full = eta.advance(&u, 0.01);
            let mut banded = HistoryState::zeros(&ages, &g);
            eta.shift_into_banded(0.01, &mut banded);
            banded.add_inflow_banded(&gains, &u);
            // Exact equality; zeros may differ in sign.
            assert_eq!(full.sub(&banded).norm_m(), 0.0, "{transport:?}");
            let (a, b) = (eta.weighted_sum(), eta.weighted_sum_banded());
            assert_eq!(a.max_abs_diff(&b), 0.0);
        }
    }
}
