//! Invariant and oracle suites behind the `verify` and `oracle` commands.
//!
//! Each check records its measured value, its threshold and the acceptance
//! criterion it covers. The fast level runs in well under a minute at
//! `N = 32`; the full level covers every criterion at its stated size.

use std::f64::consts::{LN_2, PI};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::attractor::{ball_cloud, continuous_dependence, convergence_bound_check, semicontinuity_sweep};
use crate::config::{Config, InitialHistory, InitialVelocity, NoiseSection};
use crate::diagnostics::{
    absorbing_radius, absorbing_set_check, calibrate_c_free, dissipation_residual, linear_decay_check,
    radius_series, tail_energy,
};
use crate::error::{Error, Result};
use crate::memory::{
    brute_force_history, AgeGrid, ExponentialMemoryOracle, HistoryState, KernelSpec, VelocityRecord,
};
use crate::profiles::Profile;
use crate::solver::{integrate, integrate_split, recover_u, NoiseDriver, RunOptions, SimState};
use crate::spaces::{Space, SpectralField, SpectralGrid};
use crate::stochastic::{batch_mean, ou_advance, ou_pullback, ou_series, NoisePath};
use crate::trilinear::{direct_convection, ConvectionWorkspace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Fast,
    Full,
}

impl std::str::FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fast" => Ok(Level::Fast),
            "full" => Ok(Level::Full),
            other => Err(Error::Config(format!(
                "unknown level '{other}', expected fast or full"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub criterion: u8,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
}

impl Check {
    fn at_most(name: &str, criterion: u8, value: f64, threshold: f64) -> Self {
        Self {
            name: name.to_string(),
            criterion,
            passed: value <= threshold,
            value,
            threshold,
        }
    }

    fn holds(name: &str, criterion: u8, passed: bool, value: f64) -> Self {
        Self {
            name: name.to_string(),
            criterion,
            passed,
            value,
            threshold: f64::NAN,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub level: Level,
    pub passed: bool,
    pub checks: Vec<Check>,
    /// Criteria with at least one check.
    pub covered: Vec<u8>,
}

impl VerifyReport {
    fn new(level: Level, checks: Vec<Check>) -> Self {
        let mut covered: Vec<u8> = checks.iter().map(|c| c.criterion).collect();
        covered.sort_unstable();
        covered.dedup();
        Self {
            level,
            passed: checks.iter().all(|c| c.passed),
            checks,
            covered,
        }
    }
}

/// Desk configuration on the grid of `base`, with the constants estimate
/// kept cheap.
fn desk(base: &Config) -> Config {
    Config {
        grid: base.grid.clone(),
        noise: NoiseSection {
            ladyzhenskaya_trials: base.noise.ladyzhenskaya_trials,
            ..NoiseSection::default()
        },
        ..Config::default()
    }
}

/// Every check of `level`; `scratch` receives the reproducibility runs.
pub fn run_suite(base: &Config, level: Level, scratch: &Path) -> Result<VerifyReport> {
    let full = level == Level::Full;
    let mut checks = Vec::new();
    checks.extend(divergence_checks(base, if full { 10_000 } else { 1000 })?);
    checks.extend(trilinear_checks(base)?);
    checks.extend(unforced_decay_checks(base, if full { 5.0 } else { 1.0 })?);
    checks.extend(split_checks(base, full)?);
    checks.extend(memory_oracle_checks(base)?);
    checks.extend(ou_checks()?);
    checks.extend(absorbing_checks(base, full)?);
    checks.extend(continuous_dependence_checks(base, if full { 5.0 } else { 1.0 })?);
    checks.extend(reproducibility_checks(base, scratch)?);
    if full {
        checks.extend(far_field_checks(base)?);
        checks.extend(scaling_checks(base)?);
        checks.extend(sweep_checks(base)?);
    }
    Ok(VerifyReport::new(level, checks))
}

/// The oracle comparisons only: direct-summation convection, closed-form
/// and brute-force memory, and OU moments.
pub fn run_oracles(base: &Config) -> Result<VerifyReport> {
    let mut checks = vec![direct_summation_check()?];
    checks.extend(memory_oracle_checks(base)?);
    checks.extend(ou_checks()?);
    Ok(VerifyReport::new(Level::Fast, checks))
}

pub fn divergence_checks(base: &Config, steps: usize) -> Result<Vec<Check>> {
    let mut c = desk(base);
    c.noise.epsilon = 1.0;
    let setup = c.setup()?;
    let sim = &setup.sim;
    let path = c.noise_path(1, sim.dt, steps as f64 * sim.dt)?;
    let mut d = NoiseDriver::stationary(&path, sim.sigma, 0.0)?;
    let tr = integrate(
        &c.initial_state(sim)?,
        &mut d,
        sim,
        RunOptions::new(steps).every(steps),
    )?;
    let v = &tr.last.v;
    let div = v.divergence_max() / v.norm(Space::V);

    let g = &sim.grid;
    let a = SpectralField::random(g, 5, 1.0);
    let b = SpectralField::random(g, 6, 1.0);
    let raw = SpectralField::from_coefficients(g, a.c1().to_vec(), b.c2().to_vec())?;
    let once = raw.leray_project();
    let twice = once.leray_project();
    let scale = once
        .c1()
        .iter()
        .chain(once.c2())
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    Ok(vec![
        Check::at_most("divergence_after_steps", 1, div, 1e-12),
        Check::at_most("leray_idempotence", 1, twice.max_abs_diff(&once) / scale, 1e-14),
    ])
}

/// Cancellation and skew symmetry of `b` over 100 seeded triples, relative
/// to `|u|_V |v|_V |w|_V`.
pub fn trilinear_identities(
    grid: &Arc<SpectralGrid>,
    trials: u64,
    b: &mut dyn FnMut(&SpectralField, &SpectralField, &SpectralField) -> Result<f64>,
) -> Result<Vec<Check>> {
    let (mut cancel, mut skew): (f64, f64) = (0.0, 0.0);
    for seed in 0..trials {
        let u = SpectralField::random(grid, 3 * seed, 1.0);
        let v = SpectralField::random(grid, 3 * seed + 1, 0.5);
        let w = SpectralField::random(grid, 3 * seed + 2, 1.5);
        let norm = |x: &SpectralField, y: &SpectralField, z: &SpectralField| {
            x.norm(Space::V) * y.norm(Space::V) * z.norm(Space::V)
        };
        cancel = cancel.max(b(&u, &v, &v)?.abs() / norm(&u, &v, &v));
        skew = skew.max((b(&u, &v, &w)? + b(&u, &w, &v)?).abs() / norm(&u, &v, &w));
    }
    Ok(vec![
        Check::at_most("trilinear_cancellation", 2, cancel, 1e-10),
        Check::at_most("trilinear_skew_symmetry", 2, skew, 1e-10),
    ])
}

fn direct_summation_check() -> Result<Check> {
    let g = SpectralGrid::new(2.0 * PI, 16)?;
    let mut ws = ConvectionWorkspace::new(&g);
    let mut worst: f64 = 0.0;
    for seed in 0..4 {
        let u = SpectralField::random(&g, seed, 0.5);
        let v = SpectralField::random(&g, seed + 50, 0.0);
        let slow = direct_convection(&u, &v);
        worst = worst.max(ws.convect(&u, &v)?.sub(&slow).norm(Space::H) / slow.norm(Space::H));
    }
    Ok(Check::at_most("convection_direct_summation", 2, worst, 1e-12))
}

fn trilinear_checks(base: &Config) -> Result<Vec<Check>> {
    let g = base.grid()?;
    let mut ws = ConvectionWorkspace::new(&g);
    let mut checks = trilinear_identities(&g, 100, &mut |u, v, w| ws.trilinear(u, v, w))?;
    checks.push(direct_summation_check()?);
    Ok(checks)
}

fn unforced_decay_checks(base: &Config, t_final: f64) -> Result<Vec<Check>> {
    let mut c = desk(base);
    c.physics.forcing = Profile::Zero;
    c.experiment.initial.history = InitialHistory::ConstantPast;
    let setup = c.setup()?;
    let sim = &setup.sim;
    let steps = RunOptions::steps_for(t_final, sim.dt);
    let tr = integrate(
        &c.initial_state(sim)?,
        &mut NoiseDriver::quiet(),
        sim,
        RunOptions::new(steps),
    )?;
    let d0 = setup.ledger.delta0();
    let e0 = tr.samples[0].psi_h * tr.samples[0].psi_h;
    let ratio = tr
        .samples
        .iter()
        .map(|s| s.psi_h * s.psi_h / (e0 * (-2.0 * d0 * s.t).exp()))
        .fold(0.0, f64::max);
    let c_free = calibrate_c_free(sim, &setup.ledger)?;
    let res = dissipation_residual(&tr.samples, &setup.ledger, c_free, 1e-8)?;
    Ok(vec![
        Check::at_most("unforced_decay_ratio", 3, ratio, 1.02),
        Check::at_most("dissipation_violations", 3, res.violations as f64, 0.0),
    ])
}

fn split_checks(base: &Config, full: bool) -> Result<Vec<Check>> {
    let mut c = desk(base);
    c.noise.epsilon = 1.0;
    let setup = c.setup()?;
    let sim = &setup.sim;
    let t_final = if full { 5.0 } else { 1.0 };
    let steps = RunOptions::steps_for(t_final, sim.dt);
    let path = c.noise_path(2, sim.dt, t_final)?;
    let mut d = NoiseDriver::stationary(&path, sim.sigma, 0.0)?;
    let every = RunOptions::steps_for(0.1, sim.dt);
    let tr = integrate_split(
        &c.initial_state(sim)?,
        &mut d,
        sim,
        RunOptions::new(steps).every(every),
    )?;
    let decay = linear_decay_check(&tr.samples, &setup.ledger);
    let at = |t: f64| {
        tr.samples
            .iter()
            .filter(|s| s.t <= t + 1e-9)
            .map(|s| s.consistency)
            .fold(0.0, f64::max)
    };
    let mut checks = vec![
        Check::at_most("linear_split_decay", 4, decay.worst_ratio, 1.02),
        Check::at_most("split_consistency_t1", 4, at(1.0), 1e-6),
    ];
    if full {
        checks.push(Check::at_most("split_consistency_t5", 4, at(5.0), 1e-5));
    }
    Ok(checks)
}

fn memory_oracle_checks(base: &Config) -> Result<Vec<Check>> {
    let g = SpectralGrid::new(2.0 * PI, 16)?;
    let kernel = KernelSpec::exponential(base.kernel.delta)?;
    let dt = 1e-3;
    let ages = Arc::new(AgeGrid::standard(&kernel, dt)?);
    let u0 = SpectralField::random(&g, 21, 1.0);
    let u1 = SpectralField::random(&g, 22, 1.0);
    // Constant past u0, then u0 + (1 - cos t)^2 u1.
    let signal = |t: f64| {
        let c = 1.0 - t.cos();
        let mut u = u0.clone();
        u.add_scaled(c * c, &u1);
        u
    };
    let prior = |s: f64| u0.scaled(s);
    let mut eta = HistoryState::sample(&ages, prior);
    // int mu(s) s ds = 1 for the exponential kernel.
    let mut oracle = ExponentialMemoryOracle::new(&kernel, u0.clone())?;
    let mut rec = VelocityRecord::new(dt);
    rec.push(signal(0.0));
    for n in 0..1000 {
        let b = signal((n + 1) as f64 * dt);
        let mean = signal(n as f64 * dt).add(&b).scaled(0.5);
        eta = eta.advance(&mean, dt);
        oracle.step(&mean, dt);
        rec.push(b);
    }
    let reference = brute_force_history(&rec, &ages, &g, Some(&prior));
    let exact = oracle.convolution();
    let conv = eta.memory_convolution().sub(&exact).norm(Space::H) / exact.norm(Space::H);
    let hist = eta.sub(&reference).norm_m() / reference.norm_m();
    Ok(vec![
        Check::at_most("memory_quadrature_vs_exact", 5, conv, 1e-3),
        Check::at_most("history_vs_brute_force", 5, hist, 1e-3),
    ])
}

fn ou_checks() -> Result<Vec<Check>> {
    let (sigma, dt) = (1.7, 0.013);
    let mut z = 0.9;
    let mut decay: f64 = 0.0;
    for n in 1..=1000 {
        z = ou_advance(z, 0.0, dt, sigma)?;
        let exact = 0.9 * (-sigma * dt * n as f64).exp();
        decay = decay.max((z - exact).abs() / exact);
    }

    let (sigma, dt) = (1.0, 0.05);
    let burn = 200;
    let path = NoisePath::sample_wiener(17, -((burn + 100_000) as f64) * dt, 0.0, dt)?;
    let series = ou_series(&path, sigma, 0.0)?;
    let tail = &series[burn + 1..];
    let z2: Vec<f64> = tail.iter().map(|z| z * z).collect();
    let z4: Vec<f64> = z2.iter().map(|z| z * z).collect();
    let (m2, se2) = batch_mean(&z2, 50);
    let (m4, se4) = batch_mean(&z4, 50);
    let var_z = (m2 - 0.5 / sigma).abs() / se2;
    let fourth_z = (m4 - 0.75 / (sigma * sigma)).abs() / se4;

    // ln 2 / sigma = 1 is a whole number of steps.
    let sigma = LN_2;
    let a = ou_pullback(&path, sigma, 0.0, 4.0)?;
    let b = ou_pullback(&path, sigma, 0.0, 4.0 + LN_2 / sigma)?;
    let halving = (b.truncation_bound / a.truncation_bound - 0.5).abs();
    Ok(vec![
        Check::at_most("ou_noise_free_decay", 6, decay, 1e-12),
        Check::at_most("ou_variance_se", 6, var_z, 3.0),
        Check::at_most("ou_fourth_moment_se", 6, fourth_z, 3.0),
        Check::at_most("ou_truncation_halving", 6, halving, 1e-12),
    ])
}

fn absorbing_checks(base: &Config, full: bool) -> Result<Vec<Check>> {
    let c = desk(base);
    let setup = c.setup_with_dt(c.experiment.pullback.dt)?;
    let mut ledger = setup.ledger.clone();
    let path = NoisePath::sample_wiener(3, -1200.0, 1.0, 1e-2)?;
    let d0 = ledger.delta0();
    ledger.epsilon = 0.0;
    let r0 = absorbing_radius(&path, &ledger, 0.0, 1000.0, 1.0)?;
    let mut prev = r0.r2_eps;
    let mut monotone = true;
    for eps in [0.25, 0.5, 1.0] {
        ledger.epsilon = eps;
        let r = absorbing_radius(&path, &ledger, eps, 1000.0, 1.0)?;
        monotone &= r.r2_eps >= prev;
        prev = r.r2_eps;
    }
    let mut checks = vec![
        Check::at_most("radius_noise_free", 7, (r0.r1_eps - 1.0 / d0).abs(), 1e-6),
        Check::holds("radius_monotone_in_eps", 7, monotone, prev),
    ];
    if full {
        let mut sim = setup.sim.clone();
        sim.epsilon = 1.0;
        ledger.epsilon = 1.0;
        let horizon = 40.0;
        let steps = RunOptions::steps_for(horizon, sim.dt);
        let path = NoisePath::sample_wiener(4, -1000.0, (steps + 1) as f64 * sim.dt, sim.dt)?;
        let radii = radius_series(&path, &ledger, 1.0, 0.0, steps as f64 * sim.dt, 990.0)?;
        let members = ball_cloud(&sim, 8, c.experiment.pullback.radius, 16);
        let mut energies = Vec::with_capacity(members.len());
        for m in &members {
            let mut d = NoiseDriver::stationary(&path, sim.sigma, 0.0)?;
            let tr = integrate(m, &mut d, &sim, RunOptions::new(steps))?;
            energies.push(tr.samples.iter().map(|s| s.psi_h * s.psi_h).collect::<Vec<_>>());
        }
        let r = absorbing_set_check(&energies, &radii)?;
        checks.push(Check::holds(
            "absorbing_set_finite",
            7,
            r.absorbed && r.c.is_finite(),
            r.t_absorb,
        ));
    }
    Ok(checks)
}

fn far_field_checks(base: &Config) -> Result<Vec<Check>> {
    let mut c = desk(base);
    let xc = [0.5 * c.grid.length, 0.5 * c.grid.length];
    c.physics.forcing = Profile::GaussianVortex {
        center: xc,
        width: 0.4,
        order: 1,
        amplitude: 0.5,
    };
    c.noise.profile = Profile::GaussianVortex {
        center: xc,
        width: 0.4,
        order: 0,
        amplitude: 0.05,
    };
    c.noise.epsilon = 1.0;
    c.experiment.initial.velocity = InitialVelocity::Zero;
    let setup = c.setup()?;
    let sim = &setup.sim;
    let steps = RunOptions::steps_for(5.0, sim.dt);
    let path = c.noise_path(5, sim.dt, 5.0)?;
    let mut d = NoiseDriver::stationary(&path, sim.sigma, 0.0)?;
    let tr = integrate(
        &c.initial_state(sim)?,
        &mut d,
        sim,
        RunOptions::new(steps).every(steps),
    )?;
    let state = SimState {
        t: tr.last.t,
        v: recover_u(&tr.last, tr.last_z, sim),
        eta: tr.last.eta.clone(),
    };
    let l = c.grid.length;
    let tails = [l / 8.0, l / 4.0, 3.0 * l / 8.0]
        .iter()
        .map(|&r| tail_energy(&state, r, xc))
        .collect::<Result<Vec<_>>>()?;
    Ok(vec![
        Check::holds(
            "tail_nonincreasing",
            8,
            tails.windows(2).all(|w| w[1] <= w[0]),
            tails[2],
        ),
        Check::at_most("tail_fraction_quarter", 8, tails[1] / state.energy_h(), 0.01),
    ])
}

fn continuous_dependence_checks(base: &Config, t_final: f64) -> Result<Vec<Check>> {
    let mut c = desk(base);
    c.noise.epsilon = 1.0;
    let setup = c.setup()?;
    let sim = &setup.sim;
    let path = c.noise_path(6, sim.dt, t_final)?;
    let s = c.initial_state(sim)?;
    let every = RunOptions::steps_for(0.1, sim.dt);
    let same = continuous_dependence(sim, Some(&path), &s, 0.0, t_final, every)?;
    let apart = continuous_dependence(sim, Some(&path), &s, 1e-6, t_final, every)?;
    Ok(vec![
        Check::holds(
            "identical_data_identical_paths",
            9,
            same.distances.iter().all(|&d| d == 0.0),
            0.0,
        ),
        Check::holds(
            "separation_growth_finite",
            9,
            apart.c_meas.is_finite(),
            apart.c_meas,
        ),
    ])
}

fn scaling_checks(base: &Config) -> Result<Vec<Check>> {
    let c = desk(base);
    let sim = c.setup()?.sim;
    let init = ball_cloud(&sim, 21, 0.5, 4);
    let r = convergence_bound_check(&sim, &[0.4, 0.2, 0.1, 0.05], 3, &init, 1.0, 1e-6)?;
    Ok(vec![
        Check::at_most("eps_squared_slope", 10, (r.eps_slope - 2.0).abs(), 0.3),
        Check::at_most("gronwall_spread", 10, r.gronwall_spread, 0.2),
    ])
}

fn sweep_checks(base: &Config) -> Result<Vec<Check>> {
    let c = desk(base);
    let sim = c.setup_with_dt(c.experiment.pullback.dt)?.sim;
    let r = semicontinuity_sweep(&sim, &c.sweep_spec())?;
    let last = r.rows.last().map_or(f64::NAN, |row| row.mean);
    Ok(vec![
        Check::holds("sweep_monotone", 11, r.monotone_within_noise, r.rows[0].mean),
        Check::holds("sweep_strict_decrease", 11, r.strictly_smaller_at_end, last),
    ])
}

fn reproducibility_checks(base: &Config, scratch: &Path) -> Result<Vec<Check>> {
    let mut c = desk(base);
    c.noise.epsilon = 0.5;
    c.integration.t_final = 0.2;
    c.integration.checkpoint_every = 5;
    let (a, b) = (scratch.join("repro_a"), scratch.join("repro_b"));
    crate::cli::cmd_simulate(&c, &a)?;
    crate::cli::cmd_simulate(&c, &b)?;
    let identical = crate::cli::outputs_identical(&a, &b)?;
    Ok(vec![Check::holds("simulate_rerun_identical", 12, identical, 0.0)])
}
