//! Pullback ensembles, attractor proxies, Hausdorff semi-distances and the
//! small-noise sweep.
//!
//! A pullback run integrates from `-T` to `0` along one noise path and
//! reports the state at time zero. Every member of an ensemble sees the same
//! path; members run in parallel and results keep member order.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::fit_growth_rate;
use crate::error::{invalid, Error, Result};
use crate::solver::{integrate, recover_u, NoiseDriver, RunOptions, SimConfig, SimState};
use crate::spaces::{Space, SpectralField};
use crate::stochastic::NoisePath;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloudLabel {
    pub epsilon: f64,
    pub seed: Option<u64>,
    pub pullback_time: f64,
}

/// Nonempty set of states on one grid and age grid.
#[derive(Clone, Debug)]
pub struct PointCloud {
    members: Vec<SimState>,
    pub label: CloudLabel,
}

#[derive(Serialize, Deserialize)]
struct CloudManifest {
    label: CloudLabel,
    members: Vec<String>,
}

impl PointCloud {
    pub fn new(members: Vec<SimState>, label: CloudLabel) -> Result<Self> {
        let Some(first) = members.first() else {
            return Err(invalid("members", "a point cloud needs at least one member"));
        };
        let grid = first.v.grid();
        let ages = first.eta.ages();
        if members
            .iter()
            .any(|m| !m.v.grid().same_as(grid) || m.eta.ages().nodes() != ages.nodes())
        {
            return Err(Error::GridMismatch);
        }
        Ok(Self { members, label })
    }

    pub fn members(&self) -> &[SimState] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Largest `||psi||_H` over members.
    pub fn radius(&self) -> f64 {
        self.members
            .iter()
            .map(|m| m.energy_h().sqrt())
            .fold(0.0, f64::max)
    }

    pub fn diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for (i, a) in self.members.iter().enumerate() {
            for b in &self.members[i + 1..] {
                d = d.max(a.distance(b));
            }
        }
        d
    }

    /// Writes `<stem>.json` and one checkpoint per member next to it.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let mut names = Vec::with_capacity(self.members.len());
        for (i, m) in self.members.iter().enumerate() {
            let name = format!("{stem}_{i:04}.state");
            let mut w = BufWriter::new(fs::File::create(dir.join(&name))?);
            m.write_to(&mut w)?;
            w.flush()?;
            names.push(name);
        }
        let manifest = CloudManifest {
            label: self.label.clone(),
            members: names,
        };
        let path = dir.join(format!("{stem}.json"));
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(path)
    }

    pub fn load(manifest: &Path, cfg: &SimConfig) -> Result<Self> {
        let m: CloudManifest = serde_json::from_str(&fs::read_to_string(manifest)?)?;
        let dir = manifest.parent().unwrap_or(Path::new("."));
        let members = m
            .members
            .iter()
            .map(|name| {
                let mut r = BufReader::new(fs::File::open(dir.join(name))?);
                SimState::read_from(&mut r, cfg)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(members, m.label)
    }
}

/// `sup_{a in A} inf_{b in B} ||a - b||_H`.
pub fn hausdorff_semidist(a: &PointCloud, b: &PointCloud) -> f64 {
    a.members
        .iter()
        .map(|x| {
            b.members
                .iter()
                .map(|y| x.distance(y))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

/// Symmetric Hausdorff distance.
pub fn hausdorff_distance(a: &PointCloud, b: &PointCloud) -> f64 {
    hausdorff_semidist(a, b).max(hausdorff_semidist(b, a))
}

/// `members` states with velocities of random direction and `H` norm
/// `radius * sqrt(U)`, `U` uniform, and zero history.
pub fn ball_cloud(cfg: &SimConfig, seed: u64, radius: f64, members: usize) -> Vec<SimState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..members)
        .map(|_| {
            let field_seed: u64 = rng.gen();
            let frac: f64 = rng.gen();
            let v = SpectralField::random(&cfg.grid, field_seed, 1.0);
            let norm = v.norm(Space::H);
            let v = if norm > 0.0 {
                v.scaled(radius * frac.sqrt() / norm)
            } else {
                v
            };
            SimState::at_rest_history(cfg, v, 0.0)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct PullbackReport {
    pub cloud: PointCloud,
    /// Indices of members removed after blowing up.
    pub dropped: Vec<usize>,
}

fn driver<'a>(cfg: &SimConfig, path: Option<&'a NoisePath>, t0: f64) -> Result<NoiseDriver<'a>> {
    if cfg.epsilon == 0.0 {
        return Ok(NoiseDriver::quiet());
    }
    let path = path.ok_or_else(|| invalid("path", "a noise path is required when eps > 0"))?;
    if (path.dt() - cfg.dt).abs() > 1e-12 * cfg.dt {
        return Err(invalid("path", "path and solver steps differ"));
    }
    NoiseDriver::stationary(path, cfg.sigma, t0)
}

/// Evolves every member from `-T` to `0` along `path` (ignored when
/// `eps = 0`). `T` is rounded up to whole steps.
pub fn pullback_ensemble(
    initial: &[SimState],
    path: Option<&NoisePath>,
    t_pullback: f64,
    cfg: &SimConfig,
    label: CloudLabel,
) -> Result<PullbackReport> {
    if !(t_pullback >= 0.0) {
        return Err(invalid("t_pullback", "must be nonnegative"));
    }
    let steps = RunOptions::steps_for(t_pullback, cfg.dt);
    let t0 = -(steps as f64) * cfg.dt;
    let results: Vec<Result<SimState>> = initial
        .par_iter()
        .map(|m| {
            let mut start = m.clone();
            start.t = t0;
            let mut noise = driver(cfg, path, t0)?;
            let opts = RunOptions::new(steps).every(steps.max(1));
            let mut end = integrate(&start, &mut noise, cfg, opts)?.last;
            end.t = 0.0;
            Ok(end)
        })
        .collect();
    let mut members = Vec::with_capacity(results.len());
    let mut dropped = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(s) => members.push(s),
            Err(Error::BlowUp { .. }) => dropped.push(i),
            Err(e) => return Err(e),
        }
    }
    Ok(PullbackReport {
        cloud: PointCloud::new(members, label)?,
        dropped,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateOptions {
    /// Stop when consecutive clouds are within `rel_tol` of the cloud radius...
    pub rel_tol: f64,
    /// ...plus this absolute slack, which decides collapse onto zero.
    pub abs_tol: f64,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-3,
            abs_tol: 1e-10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HorizonStep {
    pub horizon: f64,
    /// Hausdorff distance to the previous horizon's cloud (`NaN` for the first).
    pub distance: f64,
    pub radius: f64,
    pub dropped: usize,
}

#[derive(Clone, Debug)]
pub struct AttractorEstimate {
    pub cloud: PointCloud,
    pub curve: Vec<HorizonStep>,
    pub converged: bool,
}

/// Pullback clouds at increasing horizons until two consecutive ones agree.
/// Without convergence the last cloud is returned and flagged.
pub fn attractor_estimate(
    initial: &[SimState],
    path: Option<&NoisePath>,
    cfg: &SimConfig,
    horizons: &[f64],
    opts: EstimateOptions,
    seed: Option<u64>,
) -> Result<AttractorEstimate> {
    if horizons.is_empty() || horizons.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("horizons", "need an increasing, nonempty list"));
    }
    let mut curve = Vec::new();
    let mut prev: Option<PointCloud> = None;
    for &h in horizons {
        let label = CloudLabel {
            epsilon: cfg.epsilon,
            seed,
            pullback_time: h,
        };
        let report = pullback_ensemble(initial, path, h, cfg, label)?;
        let cloud = report.cloud;
        let radius = cloud.radius();
        let distance = prev.as_ref().map_or(f64::NAN, |p| hausdorff_distance(p, &cloud));
        curve.push(HorizonStep {
            horizon: h,
            distance,
            radius,
            dropped: report.dropped.len(),
        });
        if distance <= opts.rel_tol * radius + opts.abs_tol {
            return Ok(AttractorEstimate {
                cloud,
                curve,
                converged: true,
            });
        }
        prev = Some(cloud);
    }
    Ok(AttractorEstimate {
        cloud: prev.expect("at least one horizon"),
        curve,
        converged: false,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    /// Descending noise intensities.
    pub epsilons: Vec<f64>,
    pub seeds: Vec<u64>,
    pub members: usize,
    pub radius: f64,
    pub horizons: Vec<f64>,
    pub estimate: EstimateOptions,
    /// Seed of the initial ball cloud, shared by every cell.
    pub cloud_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub distances: Vec<f64>,
    pub mean: f64,
    pub max: f64,
    pub converged: Vec<bool>,
    pub horizons_used: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepReport {
    pub spec: SweepSpec,
    pub sigma: f64,
    pub members: usize,
    pub reference_horizon: f64,
    pub reference_converged: bool,
    pub rows: Vec<SweepRow>,
    /// Means nonincreasing as `eps` decreases, within 10%.
    pub monotone_within_noise: bool,
    /// Mean at the smallest `eps` below the mean at the largest.
    pub strictly_smaller_at_end: bool,
}

impl SweepReport {
    pub const CSV_HEADER: &'static str = "epsilon,mean_dist,max_dist,seeds";

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        let seeds: Vec<String> = self.spec.seeds.iter().map(u64::to_string).collect();
        for r in &self.rows {
            writeln!(w, "{},{},{},{}", r.epsilon, r.mean, r.max, seeds.join(";"))?;
        }
        Ok(())
    }
}

/// Path on `[-(T_max + burn), 0]`; the OU coefficient relaxes during the
/// burn-in before any member starts.
pub fn sweep_path(seed: u64, cfg: &SimConfig, t_max: f64) -> Result<NoisePath> {
    let burn = (20.0 / cfg.sigma).max(1.0);
    let steps = RunOptions::steps_for(t_max + burn, cfg.dt) + 1;
    NoisePath::sample_wiener(seed, -(steps as f64) * cfg.dt, 0.0, cfg.dt)
}

/// `dist(A_eps(omega), A_0)` per `eps` and seed. `cfg.sigma` stays fixed
/// across `eps` so that every cell of a seed sees the same `z` path.
pub fn semicontinuity_sweep(cfg: &SimConfig, spec: &SweepSpec) -> Result<SweepReport> {
    if spec.epsilons.is_empty() || spec.epsilons.windows(2).any(|w| w[1] >= w[0]) {
        return Err(invalid("epsilons", "need a strictly descending list"));
    }
    if spec.seeds.is_empty() || spec.members == 0 {
        return Err(invalid("seeds", "need at least one seed and one member"));
    }
    let initial = ball_cloud(cfg, spec.cloud_seed, spec.radius, spec.members);
    let deterministic = cfg.deterministic();
    let reference = attractor_estimate(
        &initial,
        None,
        &deterministic,
        &spec.horizons,
        spec.estimate,
        None,
    )?;
    let t_max = *spec.horizons.last().expect("nonempty");
    let paths = spec
        .seeds
        .iter()
        .map(|&s| sweep_path(s, cfg, t_max))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(spec.epsilons.len());
    for &eps in &spec.epsilons {
        let cell = SimConfig {
            epsilon: eps,
            ..cfg.clone()
        };
        let mut row = SweepRow {
            epsilon: eps,
            distances: Vec::new(),
            mean: 0.0,
            max: 0.0,
            converged: Vec::new(),
            horizons_used: Vec::new(),
        };
        for (path, &seed) in paths.iter().zip(&spec.seeds) {
            let est = attractor_estimate(
                &initial,
                Some(path),
                &cell,
                &spec.horizons,
                spec.estimate,
                Some(seed),
            )?;
            row.distances
                .push(hausdorff_semidist(&est.cloud, &reference.cloud));
            row.converged.push(est.converged);
            row.horizons_used.push(est.cloud.label.pullback_time);
        }
        row.mean = row.distances.iter().sum::<f64>() / row.distances.len() as f64;
        row.max = row.distances.iter().cloned().fold(0.0, f64::max);
        rows.push(row);
    }
    let monotone_within_noise = rows.windows(2).all(|w| w[1].mean <= 1.1 * w[0].mean);
    let strictly_smaller_at_end = rows.last().expect("nonempty").mean < rows[0].mean;
    Ok(SweepReport {
        spec: spec.clone(),
        sigma: cfg.sigma,
        members: spec.members,
        reference_horizon: reference.cloud.label.pullback_time,
        reference_converged: reference.converged,
        rows,
        monotone_within_noise,
        strictly_smaller_at_end,
    })
}

/// `||u - u'||^2 + ||eta - eta'||_M^2`, comparing original velocities.
fn phi_distance_sq(
    a: &SimState,
    za: f64,
    cfg_a: &SimConfig,
    b: &SimState,
    zb: f64,
    cfg_b: &SimConfig,
) -> f64 {
    let du = recover_u(a, za, cfg_a).sub(&recover_u(b, zb, cfg_b));
    du.norm_sq(Space::H) + a.eta.sub(&b.eta).norm_m_sq()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub epsilon: f64,
    /// Mean over initial data of `||phi_eps(T) - phi_0(T)||_H^2`.
    pub difference_sq: f64,
    /// Fitted `c` in `||d(t)||^2 ~ e^{c t} ||d(0)||^2` for a perturbed pair.
    pub gronwall_exponent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub t_final: f64,
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slope of `ln difference_sq` against `ln eps`, over `eps > 0`.
    pub eps_slope: f64,
    /// `(max - min) / max |c|` over the Gronwall exponents.
    pub gronwall_spread: f64,
}

/// Matched-path comparison of the noisy and noise-free flows from the same
/// data, plus the growth of a small separation at each `eps`.
pub fn convergence_bound_check(
    cfg: &SimConfig,
    epsilons: &[f64],
    seed: u64,
    initial: &[SimState],
    t_final: f64,
    separation: f64,
) -> Result<ConvergenceReport> {
    if epsilons.iter().any(|&e| !(e >= 0.0)) || initial.is_empty() {
        return Err(invalid(
            "epsilons",
            "need nonnegative intensities and initial data",
        ));
    }
    if initial.iter().any(|s| s.t != 0.0) {
        return Err(invalid("initial", "initial data must sit at t = 0"));
    }
    let steps = RunOptions::steps_for(t_final, cfg.dt);
    let burn = RunOptions::steps_for((20.0 / cfg.sigma).max(1.0), cfg.dt) as f64 * cfg.dt;
    let path = NoisePath::sample_wiener(seed, -burn, (steps + 1) as f64 * cfg.dt, cfg.dt)?;
    let det = cfg.deterministic();
    let det_ends = initial
        .par_iter()
        .map(|s| {
            integrate(
                s,
                &mut NoiseDriver::quiet(),
                &det,
                RunOptions::new(steps).every(steps.max(1)),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let every = (steps / 20).max(1);
    let mut rows = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let cell = SimConfig {
            epsilon: eps,
            ..cfg.clone()
        };
        let ends = initial
            .par_iter()
            .map(|s| {
                let mut d = NoiseDriver::stationary(&path, cell.sigma, s.t)?;
                integrate(s, &mut d, &cell, RunOptions::new(steps).every(steps.max(1)))
            })
            .collect::<Result<Vec<_>>>()?;
        let difference_sq = ends
            .iter()
            .zip(&det_ends)
            .map(|(a, b)| phi_distance_sq(&a.last, a.last_z, &cell, &b.last, 0.0, &det))
            .sum::<f64>()
            / initial.len() as f64;

        let base = &initial[0];
        let mut pert = base.clone();
        let dir = SpectralField::random(&cfg.grid, seed ^ 0x5eed, 1.0);
        pert.v.add_scaled(separation / dir.norm(Space::H), &dir);
        let run = |s: &SimState| -> Result<_> {
            let mut d = NoiseDriver::stationary(&path, cell.sigma, s.t)?;
            integrate(
                s,
                &mut d,
                &cell,
                RunOptions::new(steps).every(every).keeping_states(),
            )
        };
        let (ta, tb) = (run(base)?, run(&pert)?);
        let times: Vec<f64> = ta.samples.iter().map(|s| s.t - base.t).collect();
        let dists: Vec<f64> = ta
            .states
            .iter()
            .zip(&tb.states)
            .map(|(a, b)| a.distance(b).powi(2))
            .collect();
        rows.push(ConvergenceRow {
            epsilon: eps,
            difference_sq,
            gronwall_exponent: fit_growth_rate(&times, &dists).slope,
        });
    }
    let fitted: Vec<&ConvergenceRow> = rows.iter().filter(|r| r.epsilon > 0.0).collect();
    let xs: Vec<f64> = fitted.iter().map(|r| r.epsilon.ln()).collect();
    let ys: Vec<f64> = fitted.iter().map(|r| r.difference_sq.ln()).collect();
    let exps: Vec<f64> = rows.iter().map(|r| r.gronwall_exponent).collect();
    let (lo, hi) = exps
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
            (a.min(x), b.max(x))
        });
    Ok(ConvergenceReport {
        t_final: steps as f64 * cfg.dt,
        rows,
        eps_slope: least_squares_slope(&xs, &ys),
        gronwall_spread: (hi - lo) / lo.abs().max(hi.abs()),
    })
}

pub(crate) fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DependenceReport {
    pub times: Vec<f64>,
    pub distances: Vec<f64>,
    /// Smallest `C` with `d(t) <= d(0) e^{C t}` at every sample.
    pub c_meas: f64,
}

/// Distance between the flows from `initial` and from `initial` displaced
/// by `separation` along a seeded direction, on the same noise.
pub fn continuous_dependence(
    cfg: &SimConfig,
    path: Option<&NoisePath>,
    initial: &SimState,
    separation: f64,
    t_final: f64,
    sample_every: usize,
) -> Result<DependenceReport> {
    let steps = RunOptions::steps_for(t_final, cfg.dt);
    let dir = SpectralField::random(&cfg.grid, 0xd1ff, 1.0);
    let mut other = initial.clone();
    other.v.add_scaled(separation / dir.norm(Space::H), &dir);
    let opts = RunOptions::new(steps).every(sample_every).keeping_states();
    let a = integrate(initial, &mut driver(cfg, path, initial.t)?, cfg, opts)?;
    let b = integrate(&other, &mut driver(cfg, path, initial.t)?, cfg, opts)?;
    let times: Vec<f64> = a.samples.iter().map(|s| s.t - initial.t).collect();
    let distances: Vec<f64> = a
        .states
        .iter()
        .zip(&b.states)
        .map(|(x, y)| x.distance(y))
        .collect();
    let c_meas = fit_growth_rate(&times, &distances).sup_rate;
    Ok(DependenceReport {
        times,
        distances,
        c_meas,
    })
}
