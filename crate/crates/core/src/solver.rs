//! Pathwise integration of the transformed system
//!
//! `v_t = -nu A v - int mu A eta ds - B(v + eps y, v + eps y) + f + eps (sigma y - nu A y)`,
//! `eta_t = -eta_s + v + eps y`, with `y = z h`,
//!
//! by an integrating-factor Heun scheme: `nu A` is exact per mode, the rest
//! is explicit with a trapezoidal corrector, and the history is transported
//! with the stage-averaged velocity. The scheme lives on the dealiased
//! modes: states are projected there on entry, and every term keeps them
//! there.

use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::memory::{AgeGrid, HistoryState, KernelSpec};
use crate::spaces::{read_f64, Space, SpectralField, SpectralGrid};
use crate::stochastic::{beta1, NoisePath, OuProcess};
use crate::trilinear::ConvectionWorkspace;

/// Which explicit terms are active; both on for the physical system. With
/// the memory term off the history is decoupled and is not advanced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Terms {
    pub convection: bool,
    pub memory: bool,
}

impl Default for Terms {
    fn default() -> Self {
        Self {
            convection: true,
            memory: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub grid: Arc<SpectralGrid>,
    pub kernel: KernelSpec,
    pub ages: Arc<AgeGrid>,
    pub nu: f64,
    pub f: SpectralField,
    pub h: SpectralField,
    pub epsilon: f64,
    pub sigma: f64,
    pub dt: f64,
    pub terms: Terms,
    /// Abort when `||v||_H^2` exceeds this multiple of `max(E_0, 1)`, with
    /// `E_0` the initial `H x M` energy.
    pub blowup_factor: f64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(invalid("dt", format!("must be positive, got {}", self.dt)));
        }
        if !(self.nu > 0.0) {
            return Err(invalid("nu", format!("must be positive, got {}", self.nu)));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(invalid(
                "epsilon",
                format!("must lie in [0, 1], got {}", self.epsilon),
            ));
        }
        if !(self.sigma > 0.0) {
            return Err(invalid("sigma", format!("must be positive, got {}", self.sigma)));
        }
        for (name, field) in [("f", &self.f), ("h", &self.h)] {
            if !self.grid.same_as(field.grid()) {
                return Err(Error::GridMismatch);
            }
            if !field.is_band_limited() {
                return Err(invalid(name, "must vanish outside the dealiased modes"));
            }
            let scale = field.norm(Space::V).max(f64::MIN_POSITIVE);
            if field.divergence_max() > 1e-10 * scale {
                return Err(invalid(name, "must be divergence-free"));
            }
        }
        Ok(())
    }

    /// Same configuration with the noise switched off.
    pub fn deterministic(&self) -> Self {
        Self {
            epsilon: 0.0,
            ..self.clone()
        }
    }
}

const STATE_MAGIC: &[u8; 4] = b"VSTA";

#[derive(Clone, Debug)]
pub struct SimState {
    pub t: f64,
    pub v: SpectralField,
    pub eta: HistoryState,
}

impl SimState {
    pub fn zeros(cfg: &SimConfig, t: f64) -> Self {
        Self {
            t,
            v: SpectralField::zeros(&cfg.grid),
            eta: HistoryState::zeros(&cfg.ages, &cfg.grid),
        }
    }

    /// Velocity `v0` with zero history.
    pub fn at_rest_history(cfg: &SimConfig, v0: SpectralField, t: f64) -> Self {
        Self {
            t,
            v: v0,
            eta: HistoryState::zeros(&cfg.ages, &cfg.grid),
        }
    }

    /// Velocity `v0` with the history of a constant past velocity `v0`.
    pub fn with_constant_past(cfg: &SimConfig, v0: SpectralField, t: f64) -> Self {
        let eta = HistoryState::sample(&cfg.ages, |s| v0.scaled(s));
        Self { t, v: v0, eta }
    }

    /// `||v||_H^2 + ||eta||_M^2`.
    pub fn energy_h(&self) -> f64 {
        self.v.norm_sq(Space::H) + self.eta.norm_m_sq()
    }

    /// `||v||_V^2 + ||eta||_M1^2`.
    pub fn energy_h1(&self) -> f64 {
        self.v.norm_sq(Space::V) + self.eta.norm_m1().powi(2)
    }

    /// Distance in the `H x M` norm.
    pub fn distance(&self, other: &SimState) -> f64 {
        let dv = self.v.sub(&other.v).norm_sq(Space::H);
        let de = self.eta.sub(&other.eta).norm_m_sq();
        (dv + de).sqrt()
    }

    pub fn add(&self, other: &SimState) -> SimState {
        SimState {
            t: self.t,
            v: self.v.add(&other.v),
            eta: self.eta.add(&other.eta),
        }
    }

    pub fn sub(&self, other: &SimState) -> SimState {
        SimState {
            t: self.t,
            v: self.v.sub(&other.v),
            eta: self.eta.sub(&other.eta),
        }
    }

    /// Projects onto the dealiased modes, the phase space of the scheme.
    pub fn dealias(&mut self) {
        self.v.dealias();
        self.eta.dealias();
    }

    /// Binary checkpoint: magic, time, velocity record, history record.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(STATE_MAGIC)?;
        w.write_all(&self.t.to_le_bytes())?;
        self.v.write_to(w)?;
        self.eta.write_to(w)
    }

    pub fn read_from<R: Read>(r: &mut R, cfg: &SimConfig) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != STATE_MAGIC {
            return Err(Error::Format("bad state magic".into()));
        }
        let t = read_f64(r)?;
        let v = SpectralField::read_from(r, Some(&cfg.grid))?;
        let eta = HistoryState::read_from(r, &cfg.ages, &cfg.grid)?;
        Ok(Self { t, v, eta })
    }

    pub fn divergence_max(&self) -> f64 {
        self.v.divergence_max().max(self.eta.divergence_max())
    }

    pub fn bit_identical(&self, other: &SimState) -> bool {
        self.t.to_bits() == other.t.to_bits()
            && crate::memory::fields_bit_identical(&self.v, &other.v)
            && self.eta.bit_identical(&other.eta)
    }
}

/// The linear part `psi_L` and nonlinear part `psi_N` of a split solution.
#[derive(Clone, Debug)]
pub struct SplitState {
    pub psi_l: SimState,
    pub psi_n: SimState,
}

/// Noise data for one step: `z` at both ends and the Wiener increment.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NoiseStep {
    pub z0: f64,
    pub z1: f64,
    pub dw: f64,
}

/// Supplies [`NoiseStep`]s along a path, or zeros.
#[derive(Clone, Debug)]
pub struct NoiseDriver<'a> {
    source: Option<(&'a NoisePath, OuProcess)>,
}

impl<'a> NoiseDriver<'a> {
    pub fn quiet() -> Self {
        Self { source: None }
    }

    /// Stationary `z` at time `t_start`, pulled back from the start of the path.
    pub fn stationary(path: &'a NoisePath, sigma: f64, t_start: f64) -> Result<Self> {
        let index = path.index_of(t_start)?;
        Ok(Self {
            source: Some((path, OuProcess::stationary(path, sigma, index)?)),
        })
    }

    pub fn z(&self) -> f64 {
        self.source.as_ref().map_or(0.0, |(_, ou)| ou.z())
    }

    pub fn next_step(&mut self) -> Result<NoiseStep> {
        match &mut self.source {
            None => Ok(NoiseStep::default()),
            Some((path, ou)) => {
                if ou.index() >= path.end_index() {
                    return Err(invalid("path", "noise path ends before the integration"));
                }
                let z0 = ou.z();
                let dw = path.increment(ou.index());
                let z1 = ou.step(path);
                Ok(NoiseStep { z0, z1, dw })
            }
        }
    }
}

/// The five terms of the velocity tangent, evaluated at one instant.
#[derive(Clone, Debug)]
pub struct RhsTerms {
    pub viscous: SpectralField,
    pub memory: SpectralField,
    pub convection: SpectralField,
    pub forcing: SpectralField,
    pub noise: SpectralField,
}

impl RhsTerms {
    pub fn total(&self) -> SpectralField {
        let mut t = self.viscous.clone();
        for x in [&self.memory, &self.convection, &self.forcing, &self.noise] {
            t.add_scaled(1.0, x);
        }
        t
    }
}

/// One system advanced by the stepper: the full state, or a split part.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Part {
    /// Carries the forcing and the shifted noise field; advected by itself.
    Full,
    /// No forcing, no noise field in its inflow.
    Linear,
    /// Carries the forcing and the shifted noise field.
    Nonlinear,
}

impl Part {
    fn carries_noise(self) -> bool {
        self != Part::Linear
    }
}

/// Reusable integrator for one configuration.
pub struct Stepper {
    cfg: SimConfig,
    ws: ConvectionWorkspace,
    decay: Vec<f64>,
    gains: Vec<f64>,
    gain_total: f64,
    ah: SpectralField,
    /// Reused history buffers, one per co-evolved system.
    scratch: Vec<HistoryState>,
}

impl Stepper {
    pub fn new(cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        let decay = cfg
            .grid
            .ksq()
            .iter()
            .map(|k2| (-cfg.nu * k2 * cfg.dt).exp())
            .collect();
        let gains = cfg.ages.transport_gains(cfg.dt);
        let gain_total = gains.iter().zip(cfg.ages.weights()).map(|(g, w)| g * w).sum();
        Ok(Self {
            cfg: cfg.clone(),
            ws: ConvectionWorkspace::new(&cfg.grid),
            decay,
            gains,
            gain_total,
            ah: cfg.h.stokes_apply(2.0),
            scratch: Vec::new(),
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    /// All terms of the tangent at `(v, eta)` with coefficient `z`.
    pub fn rhs_terms(&mut self, v: &SpectralField, eta: &HistoryState, z: f64) -> RhsTerms {
        let cfg = &self.cfg;
        let eps = cfg.epsilon;
        let viscous = v.stokes_apply(2.0).scaled(-cfg.nu);
        let memory = if cfg.terms.memory {
            eta.memory_convolution().scaled(-1.0)
        } else {
            SpectralField::zeros(&cfg.grid)
        };
        let mut w = v.clone();
        w.add_scaled(eps * z, &cfg.h);
        let convection = if cfg.terms.convection {
            self.ws.load_advector(&w);
            self.ws.advect(&w).leray_project().scaled(-1.0)
        } else {
            SpectralField::zeros(&cfg.grid)
        };
        let mut noise = cfg.h.scaled(eps * cfg.sigma * z);
        noise.add_scaled(-eps * cfg.nu * z, &self.ah);
        RhsTerms {
            viscous,
            memory,
            convection,
            forcing: cfg.f.clone(),
            noise,
        }
    }

    pub fn rhs_v(&mut self, v: &SpectralField, eta: &HistoryState, z: f64) -> SpectralField {
        self.rhs_terms(v, eta, z).total()
    }

    /// Explicit part of the tangent for one system, with the advector loaded.
    /// `mem` is `int mu eta ds`; `inflow` is the field the history receives.
    fn explicit(
        &mut self,
        part: Part,
        mem: &SpectralField,
        inflow: &SpectralField,
        z: f64,
        noise_rate: f64,
    ) -> SpectralField {
        let cfg = &self.cfg;
        let mut out = if cfg.terms.convection {
            let mut b = self.ws.advect(inflow).leray_project();
            b.scale(-1.0);
            b
        } else {
            SpectralField::zeros(&cfg.grid)
        };
        if cfg.terms.memory {
            let mut m = mem.stokes_apply(2.0);
            m.scale(-1.0);
            out.add_scaled(1.0, &m);
        }
        if part.carries_noise() {
            out.add_scaled(1.0, &cfg.f);
            if cfg.epsilon != 0.0 {
                out.add_scaled(cfg.epsilon * noise_rate, &cfg.h);
                out.add_scaled(-cfg.epsilon * cfg.nu * z, &self.ah);
            }
        }
        out
    }

    fn inflow(&self, part: Part, v: &SpectralField, z: f64) -> SpectralField {
        let mut a = v.clone();
        if part.carries_noise() && self.cfg.epsilon != 0.0 {
            a.add_scaled(self.cfg.epsilon * z, &self.cfg.h);
        }
        a
    }

    /// Advances several coupled systems by one step. `systems[0]` must be the
    /// full state: it supplies the advecting velocity for every system.
    fn step_systems(&mut self, systems: &mut [(Part, &mut SimState)], noise: NoiseStep) {
        let dt = self.cfg.dt;
        // int_{t_n}^{t_n+1} sigma z dt = dW - (z1 - z0) exactly, so the
        // sigma-term enters as a constant rate over the step.
        let noise_rate = (noise.dw - (noise.z1 - noise.z0)) / dt;
        let n = systems.len();
        while self.scratch.len() < n {
            self.scratch
                .push(HistoryState::zeros(&self.cfg.ages, &self.cfg.grid));
        }
        let mut shifted = std::mem::take(&mut self.scratch);
        let mut inflow0 = Vec::with_capacity(n);
        let mut rhs0 = Vec::with_capacity(n);
        let mut pred = Vec::with_capacity(n);

        let w0 = self.inflow(Part::Full, &systems[0].1.v, noise.z0);
        if self.cfg.terms.convection {
            self.ws.load_advector(&w0);
        }
        for (i, (part, state)) in systems.iter().enumerate() {
            let a0 = self.inflow(*part, &state.v, noise.z0);
            let mem0 = if self.cfg.terms.memory {
                state.eta.weighted_sum_banded()
            } else {
                SpectralField::zeros(&self.cfg.grid)
            };
            let r0 = self.explicit(*part, &mem0, &a0, noise.z0, noise_rate);
            let mut p = state.v.clone();
            p.add_scaled(dt, &r0);
            p.mul_modes(&self.decay);
            if self.cfg.terms.memory {
                state.eta.shift_into_banded(dt, &mut shifted[i]);
            }
            inflow0.push(a0);
            rhs0.push(r0);
            pred.push(p);
        }

        let w1 = self.inflow(Part::Full, &pred[0], noise.z1);
        if self.cfg.terms.convection {
            self.ws.load_advector(&w1);
        }
        for (i, (part, state)) in systems.iter_mut().enumerate() {
            let a1 = self.inflow(*part, &pred[i], noise.z1);
            // int mu eta* ds for eta* = shifted + gains * a0, without forming eta*.
            let mem1 = if self.cfg.terms.memory {
                let mut m = shifted[i].weighted_sum_banded();
                m.add_scaled(self.gain_total, &inflow0[i]);
                m
            } else {
                SpectralField::zeros(&self.cfg.grid)
            };
            let r1 = self.explicit(*part, &mem1, &a1, noise.z1, noise_rate);

            let mut v = state.v.clone();
            v.add_scaled(0.5 * dt, &rhs0[i]);
            v.mul_modes(&self.decay);
            v.add_scaled(0.5 * dt, &r1);

            let mut mean = inflow0[i].clone();
            mean.add_scaled(1.0, &a1);
            mean.scale(0.5);
            if self.cfg.terms.memory {
                shifted[i].add_inflow_banded(&self.gains, &mean);
                std::mem::swap(&mut state.eta, &mut shifted[i]);
            }

            state.v = v;
            state.t += dt;
        }
        self.scratch = shifted;
    }

    pub fn step(&mut self, state: &SimState, noise: NoiseStep) -> SimState {
        let mut next = state.clone();
        next.dealias();
        self.step_systems(&mut [(Part::Full, &mut next)], noise);
        next
    }

    /// `u = v + eps z h`.
    pub fn recover_u(&self, state: &SimState, z: f64) -> SpectralField {
        recover_u(state, z, &self.cfg)
    }
}

/// `u = v + eps z h`.
pub fn recover_u(state: &SimState, z: f64, cfg: &SimConfig) -> SpectralField {
    let mut u = state.v.clone();
    u.add_scaled(cfg.epsilon * z, &cfg.h);
    u
}

/// Per-sample diagnostics of a trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Sample {
    pub t: f64,
    pub v_h: f64,
    pub v_v: f64,
    pub eta_m: f64,
    pub psi_h: f64,
    pub z: f64,
    pub beta1: f64,
}

impl Sample {
    pub fn of(state: &SimState, z: f64) -> Self {
        let v_h = state.v.norm(Space::H);
        let eta_m = state.eta.norm_m();
        Self {
            t: state.t,
            v_h,
            v_v: state.v.norm(Space::V),
            eta_m,
            psi_h: v_h.hypot(eta_m),
            z,
            beta1: beta1(z),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunOptions {
    pub steps: usize,
    /// Record diagnostics every this many steps (the initial state is always recorded).
    pub sample_every: usize,
    /// Keep the full state at every sample.
    pub keep_states: bool,
}

impl RunOptions {
    pub fn new(steps: usize) -> Self {
        Self {
            steps,
            sample_every: 1,
            keep_states: false,
        }
    }

    pub fn every(mut self, n: usize) -> Self {
        self.sample_every = n.max(1);
        self
    }

    pub fn keeping_states(mut self) -> Self {
        self.keep_states = true;
        self
    }

    /// Steps needed to cover `duration` at `dt`.
    pub fn steps_for(duration: f64, dt: f64) -> usize {
        (duration / dt - 1e-9).ceil().max(0.0) as usize
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub states: Vec<SimState>,
    pub last: SimState,
    pub last_z: f64,
}

pub const CSV_HEADER: &str = "t,v_h,v_v,eta_m,psi_h,z,beta1";

impl Trajectory {
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for s in &self.samples {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                s.t, s.v_h, s.v_v, s.eta_m, s.psi_h, s.z, s.beta1
            )?;
        }
        Ok(())
    }
}

/// Checked every step on `||v||_H^2` only; the history is a running
/// integral of `v` and cannot blow up first.
fn blowup_check(state: &SimState, limit: f64) -> Result<f64> {
    let e = state.v.norm_sq(Space::H);
    if !e.is_finite() || e > limit {
        return Err(Error::BlowUp {
            t: state.t,
            energy: e,
            limit,
        });
    }
    Ok(e)
}

fn blowup_limit(cfg: &SimConfig, initial: &SimState) -> f64 {
    cfg.blowup_factor * initial.energy_h().max(1.0)
}

pub fn integrate(
    initial: &SimState,
    driver: &mut NoiseDriver,
    cfg: &SimConfig,
    opts: RunOptions,
) -> Result<Trajectory> {
    let mut stepper = Stepper::new(cfg)?;
    integrate_with(&mut stepper, initial, driver, opts)
}

/// [`integrate`] reusing a stepper.
pub fn integrate_with(
    stepper: &mut Stepper,
    initial: &SimState,
    driver: &mut NoiseDriver,
    opts: RunOptions,
) -> Result<Trajectory> {
    let limit = blowup_limit(&stepper.cfg, initial);
    let every = opts.sample_every.max(1);
    let mut state = initial.clone();
    state.dealias();
    let mut samples = vec![Sample::of(&state, driver.z())];
    let mut states = Vec::new();
    if opts.keep_states {
        states.push(state.clone());
    }
    for n in 1..=opts.steps {
        let noise = driver.next_step()?;
        stepper.step_systems(&mut [(Part::Full, &mut state)], noise);
        blowup_check(&state, limit)?;
        if n % every == 0 || n == opts.steps {
            samples.push(Sample::of(&state, noise.z1));
            if opts.keep_states {
                states.push(state.clone());
            }
        }
    }
    Ok(Trajectory {
        samples,
        states,
        last: state,
        last_z: driver.z(),
    })
}

/// The noise-free system: the same stepper with `eps = 0` and `z = 0`.
pub fn integrate_deterministic(initial: &SimState, cfg: &SimConfig, opts: RunOptions) -> Result<Trajectory> {
    integrate(initial, &mut NoiseDriver::quiet(), &cfg.deterministic(), opts)
}

/// Per-sample record of a split run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SplitSample {
    pub t: f64,
    pub psi_h_sq: f64,
    pub linear_h_sq: f64,
    pub nonlinear_h_sq: f64,
    /// `||psi - psi_L - psi_N|| / ||psi||` in the `H x M` norm (0 when `psi = 0`).
    pub consistency: f64,
}

#[derive(Clone, Debug)]
pub struct SplitTrajectory {
    pub samples: Vec<SplitSample>,
    pub full: SimState,
    pub split: SplitState,
}

/// Co-evolves `psi`, the linear part (advected by the full `v + eps y`, no
/// forcing, data `psi_0`) and the nonlinear part (zero data, all forcing),
/// and records how well the parts add up to `psi`.
pub fn integrate_split(
    initial: &SimState,
    driver: &mut NoiseDriver,
    cfg: &SimConfig,
    opts: RunOptions,
) -> Result<SplitTrajectory> {
    let mut stepper = Stepper::new(cfg)?;
    let limit = blowup_limit(cfg, initial);
    let every = opts.sample_every.max(1);
    let mut full = initial.clone();
    full.dealias();
    let mut lin = full.clone();
    let mut non = SimState::zeros(cfg, initial.t);
    let record = |full: &SimState, lin: &SimState, non: &SimState| {
        let e = full.energy_h();
        let defect = full.sub(lin).sub(non);
        let d = defect.energy_h().sqrt();
        SplitSample {
            t: full.t,
            psi_h_sq: e,
            linear_h_sq: lin.energy_h(),
            nonlinear_h_sq: non.energy_h(),
            consistency: if e > 0.0 { d / e.sqrt() } else { d },
        }
    };
    let mut samples = vec![record(&full, &lin, &non)];
    for n in 1..=opts.steps {
        let noise = driver.next_step()?;
        stepper.step_systems(
            &mut [
                (Part::Full, &mut full),
                (Part::Linear, &mut lin),
                (Part::Nonlinear, &mut non),
            ],
            noise,
        );
        blowup_check(&full, limit)?;
        if n % every == 0 || n == opts.steps {
            samples.push(record(&full, &lin, &non));
        }
    }
    Ok(SplitTrajectory {
        samples,
        full,
        split: SplitState {
            psi_l: lin,
            psi_n: non,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{AgeInterpolation, TransportScheme};
    use crate::profiles::Profile;
    use std::f64::consts::PI;

    fn config(n: usize, dt: f64) -> SimConfig {
        let grid = SpectralGrid::new(2.0 * PI, n).unwrap();
        let kernel = KernelSpec::exponential(1.0).unwrap();
        let ages = Arc::new(AgeGrid::standard(&kernel, dt).unwrap());
        SimConfig {
            f: SpectralField::zeros(&grid),
            h: SpectralField::zeros(&grid),
            grid,
            kernel,
            ages,
            nu: 0.05,
            epsilon: 0.0,
            sigma: 1.0,
            dt,
            terms: Terms::default(),
            blowup_factor: 1e12,
        }
    }

    fn forced(n: usize, dt: f64, eps: f64) -> SimConfig {
        let mut cfg = config(n, dt);
        cfg.f = Profile::GaussianVortex {
            center: [2.0, 3.0],
            width: 0.6,
            order: 1,
            amplitude: 0.5,
        }
        .build(&cfg.grid)
        .unwrap();
        cfg.h = Profile::GaussianVortex {
            center: [4.0, 3.5],
            width: 0.6,
            order: 0,
            amplitude: 0.05,
        }
        .build(&cfg.grid)
        .unwrap();
        cfg.epsilon = eps;
        cfg.sigma = 5.0;
        cfg
    }

    fn initial(cfg: &SimConfig, seed: u64) -> SimState {
        SimState::with_constant_past(cfg, SpectralField::random(&cfg.grid, seed, 2.0).scaled(0.5), 0.0)
    }

    #[test]
    fn zero_data_stays_zero() {
        let cfg = config(16, 1e-3);
        let s = SimState::zeros(&cfg, 0.0);
        let tr = integrate_deterministic(&s, &cfg, RunOptions::new(20)).unwrap();
        assert_eq!(tr.last.energy_h(), 0.0);
        let mut st = Stepper::new(&cfg).unwrap();
        assert_eq!(st.rhs_v(&s.v, &s.eta, 0.0).norm(Space::H), 0.0);
    }

    #[test]
    fn pure_stokes_step_is_exact() {
        let mut cfg = config(16, 1e-2);
        cfg.terms = Terms {
            convection: false,
            memory: false,
        };
        let v0 = SpectralField::random(&cfg.grid, 4, 1.0);
        let s = SimState::at_rest_history(&cfg, v0.clone(), 0.0);
        let mut st = Stepper::new(&cfg).unwrap();
        let next = st.step(&s, NoiseStep::default());
        let mut exact = v0.clone();
        let decay: Vec<f64> = cfg
            .grid
            .ksq()
            .iter()
            .map(|k| (-cfg.nu * k * cfg.dt).exp())
            .collect();
        exact.mul_modes(&decay);
        assert!(next.v.max_abs_diff(&exact) < 1e-15);
    }

    #[test]
    fn convection_term_cancels_against_advected_field() {
        let cfg = forced(16, 1e-3, 1.0);
        let mut st = Stepper::new(&cfg).unwrap();
        let s = initial(&cfg, 3);
        let z = 0.7;
        let terms = st.rhs_terms(&s.v, &s.eta, z);
        let u = recover_u(&s, z, &cfg);
        let scale = terms.convection.norm(Space::H) * u.norm(Space::H);
        assert!(terms.convection.inner(&u, Space::H).unwrap().abs() <= 1e-10 * scale);
        assert!(terms.total().divergence_max() < 1e-10 * terms.total().norm(Space::V));
    }

    #[test]
    fn zero_epsilon_matches_deterministic_bitwise() {
        let cfg = forced(16, 1e-3, 0.0);
        let path = NoisePath::sample_wiener(1, -5.0, 1.0, cfg.dt).unwrap();
        let mut d = NoiseDriver::stationary(&path, cfg.sigma, 0.0).unwrap();
        let s = initial(&cfg, 8);
        let a = integrate(&s, &mut d, &cfg, RunOptions::new(50)).unwrap();
        let b = integrate_deterministic(&s, &cfg, RunOptions::new(50)).unwrap();
        assert!(a.last.bit_identical(&b.last));
    }

    #[test]
    fn runs_are_reproducible() {
        let cfg = forced(16, 1e-3, 1.0);
        let path = NoisePath::sample_wiener(2, -5.0, 1.0, cfg.dt).unwrap();
        let s = initial(&cfg, 9);
        let run = || {
            let mut d = NoiseDriver::stationary(&path, cfg.sigma, 0.0).unwrap();
            integrate(&s, &mut d, &cfg, RunOptions::new(40)).unwrap()
        };
        let (a, b) = (run(), run());
        assert!(a.last.bit_identical(&b.last));
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn unforced_energy_is_nonincreasing() {
        let cfg = config(16, 1e-3);
        let s = initial(&cfg, 5);
        let tr = integrate_deterministic(&s, &cfg, RunOptions::new(300)).unwrap();
        for w in tr.samples.windows(2) {
            assert!(w[1].psi_h <= w[0].psi_h * (1.0 + 1e-10));
        }
        assert!(tr.last.divergence_max() <= 1e-12 * tr.last.v.norm(Space::V));
    }

    #[test]
    fn split_parts_add_up() {
        let cfg = forced(16, 1e-3, 1.0);
        let path = NoisePath::sample_wiener(3, -5.0, 1.0, cfg.dt).unwrap();
        let mut d = NoiseDriver::stationary(&path, cfg.sigma, 0.0).unwrap();
        let s = initial(&cfg, 6);
        let tr = integrate_split(&s, &mut d, &cfg, RunOptions::new(200).every(50)).unwrap();
        for smp in &tr.samples {
            assert!(smp.consistency <= 1e-10, "{smp:?}");
        }
    }

    #[test]
    fn split_trivial_cases() {
        let cfg = config(16, 1e-3);
        let s = initial(&cfg, 7);
        let tr = integrate_split(&s, &mut NoiseDriver::quiet(), &cfg, RunOptions::new(50)).unwrap();
        assert_eq!(tr.split.psi_n.energy_h(), 0.0);
        assert_eq!(tr.split.psi_l.distance(&tr.full), 0.0);

        let cfg = forced(16, 1e-3, 0.0);
        let zero = SimState::zeros(&cfg, 0.0);
        let tr = integrate_split(&zero, &mut NoiseDriver::quiet(), &cfg, RunOptions::new(50)).unwrap();
        assert_eq!(tr.split.psi_l.energy_h(), 0.0);
        assert_eq!(tr.split.psi_n.distance(&tr.full), 0.0);
    }

    #[test]
    fn recover_u_cases() {
        let cfg = forced(16, 1e-3, 0.5);
        let s = initial(&cfg, 2);
        assert!(recover_u(&s, 0.0, &cfg).max_abs_diff(&s.v) == 0.0);
        let u = recover_u(&s, -1.3, &cfg);
        let bound = s.v.norm(Space::H) + cfg.epsilon * crate::stochastic::c_tilde(&cfg.h) * 1.3;
        assert!(u.norm(Space::H) <= bound * (1.0 + 1e-14));
        let det = cfg.deterministic();
        assert!(recover_u(&s, 2.0, &det).max_abs_diff(&s.v) == 0.0);
    }

    #[test]
    fn blowup_is_reported() {
        let mut cfg = forced(16, 1e-3, 0.0);
        cfg.blowup_factor = 1e-3;
        let s = initial(&cfg, 1);
        let err = integrate_deterministic(&s, &cfg, RunOptions::new(10)).unwrap_err();
        assert!(matches!(err, Error::BlowUp { .. }));
    }

    /// Richardson ratio `|x(4h) - x(2h)| / |x(2h) - x(h)|` at `T = 1` on a
    /// fixed age grid uniform at the coarsest step, from a spun-up state.
    fn richardson_ratio(transport: TransportScheme) -> (f64, f64) {
        // The constant-past start leaves a kink in eta'' at age s = t; spin
        // up until it sits where the kernel weight is negligible.
        let base = forced(16, 4e-3, 0.0);
        let ages = Arc::new(
            AgeGrid::graded(&base.kernel, 4e-3, 20.0, 64, AgeInterpolation::Cubic, transport).unwrap(),
        );
        let cfg_for = |dt: f64| SimConfig {
            dt,
            ages: Arc::clone(&ages),
            ..base.clone()
        };
        let spin = cfg_for(4e-3);
        let start = integrate_deterministic(&initial(&spin, 4), &spin, RunOptions::new(2500))
            .unwrap()
            .last;
        let run = |dt: f64| {
            integrate_deterministic(
                &start,
                &cfg_for(dt),
                RunOptions::new(RunOptions::steps_for(1.0, dt)),
            )
            .unwrap()
            .last
        };
        let (a, b, c, d) = (run(4e-3), run(2e-3), run(1e-3), run(5e-4));
        (a.distance(&b) / b.distance(&c), b.distance(&c) / c.distance(&d))
    }

    #[test]
    fn second_order_in_time() {
        let (r1, r2) = richardson_ratio(TransportScheme::Exponential);
        assert!((r1 - 4.0).abs() <= 0.5 && (r2 - 4.0).abs() <= 0.5, "{r1} {r2}");
    }

    #[test]
    fn semi_lagrangian_history_is_first_order() {
        // Interpolating at fixed ages every step leaves an O(dt h^2) error.
        let (r1, r2) = richardson_ratio(TransportScheme::SemiLagrangian);
        assert!((r1 - 2.0).abs() <= 0.3 && (r2 - 2.0).abs() <= 0.3, "{r1} {r2}");
    }
}
