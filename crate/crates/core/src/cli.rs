//! Batch commands behind the `viscoflow` binary.
//!
//! Each command writes its artifacts and a `manifest.json` into an output
//! directory. Artifacts depend only on the configuration and seeds, so a
//! rerun reproduces them byte for byte; wall-clock time goes to the
//! `timing.json` sidecar, which the manifest lists but does not embed.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::attractor::{attractor_estimate, ball_cloud, semicontinuity_sweep, sweep_path};
use crate::config::{Config, Setup};
use crate::diagnostics::linear_decay_check;
use crate::error::{Error, Result};
use crate::solver::{integrate, integrate_split, NoiseDriver, RunOptions, SimState, Trajectory};
use crate::stochastic::NoisePath;
use crate::verify::{run_oracles, run_suite, Level, VerifyReport};

pub const MANIFEST: &str = "manifest.json";
pub const TIMING: &str = "timing.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: Config,
    pub seeds: Vec<u64>,
    /// Paths relative to the manifest's directory.
    pub outputs: Vec<String>,
    pub passed: bool,
    pub summary: Value,
}

/// Reads a configuration, or the configuration recorded in a manifest.
pub fn load_config(path: &Path) -> Result<Config> {
    let text = fs::read_to_string(path)?;
    let value: Value = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    if value.get("command").is_some() && value.get("config").is_some() {
        let m: RunManifest = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        return Config::from_json(&serde_json::to_string(&m.config)?);
    }
    Config::from_json(&text)
}

struct Run<'a> {
    dir: &'a Path,
    outputs: Vec<String>,
    started: Instant,
}

impl<'a> Run<'a> {
    fn start(dir: &'a Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir,
            outputs: Vec::new(),
            started: Instant::now(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, bytes)?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write(name, (serde_json::to_string_pretty(value)? + "\n").as_bytes())
    }

    fn write_state(&mut self, name: &str, state: &SimState) -> Result<()> {
        let mut buf = Vec::new();
        state.write_to(&mut buf)?;
        self.write(name, &buf)
    }

    fn finish(
        mut self,
        command: &str,
        config: &Config,
        seeds: Vec<u64>,
        passed: bool,
        summary: Value,
    ) -> Result<RunManifest> {
        let timing =
            json!({ "command": command, "wall_clock_seconds": self.started.elapsed().as_secs_f64() });
        fs::write(
            self.dir.join(TIMING),
            serde_json::to_string_pretty(&timing)? + "\n",
        )?;
        self.outputs.push(TIMING.to_string());
        let manifest = RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            seeds,
            outputs: self.outputs,
            passed,
            summary,
        };
        fs::write(
            self.dir.join(MANIFEST),
            serde_json::to_string_pretty(&manifest)? + "\n",
        )?;
        Ok(manifest)
    }
}

fn ledger_json(setup: &Setup) -> Value {
    json!({
        "entries": setup.ledger.entries(),
        "ladyzhenskaya": setup.ladyzhenskaya,
    })
}

fn driver<'a>(setup: &Setup, path: Option<&'a NoisePath>) -> Result<NoiseDriver<'a>> {
    match path {
        Some(p) if setup.sim.epsilon > 0.0 => NoiseDriver::stationary(p, setup.sim.sigma, 0.0),
        _ => Ok(NoiseDriver::quiet()),
    }
}

fn trajectory_csv(tr: &Trajectory) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    tr.write_csv(&mut buf)?;
    Ok(buf)
}

/// Runs `integrate` from the configured initial state. A blow-up still
/// writes the manifest, with `passed = false`.
pub fn cmd_simulate(config: &Config, out: &Path) -> Result<RunManifest> {
    let mut run = Run::start(out)?;
    let setup = config.setup()?;
    let sim = &setup.sim;
    let i = &config.integration;
    run.write_json("ledger.json", &ledger_json(&setup))?;
    let path = config.noise_path(config.noise.seed, sim.dt, i.t_final)?;
    let initial = config.initial_state(sim)?;
    let steps = RunOptions::steps_for(i.t_final, sim.dt);
    let mut opts = RunOptions::new(steps).every(i.sample_every);
    if i.checkpoint_every > 0 {
        opts = opts.keeping_states();
    }
    let seeds = vec![config.noise.seed];
    let tr = match integrate(&initial, &mut driver(&setup, Some(&path))?, sim, opts) {
        Ok(tr) => tr,
        Err(e @ Error::BlowUp { .. }) => {
            return run.finish(
                "simulate",
                config,
                seeds,
                false,
                json!({ "error": e.to_string() }),
            );
        }
        Err(e) => return Err(e),
    };
    run.write("trajectory.csv", &trajectory_csv(&tr)?)?;
    if i.checkpoint_every > 0 {
        for (k, s) in tr.states.iter().enumerate().step_by(i.checkpoint_every) {
            run.write_state(&format!("checkpoints/state_{k:06}.state"), s)?;
        }
    }
    run.write_state("final.state", &tr.last)?;
    let last = tr.samples.last().expect("the initial sample is always recorded");
    let summary = json!({
        "steps": steps,
        "t_final": last.t,
        "psi_h": last.psi_h,
        "z": tr.last_z,
        "sigma": sim.sigma,
    });
    run.finish("simulate", config, seeds, true, summary)
}

/// Runs `integrate_split` and checks the linear part's decay.
pub fn cmd_split(config: &Config, out: &Path) -> Result<RunManifest> {
    let mut run = Run::start(out)?;
    let setup = config.setup()?;
    let sim = &setup.sim;
    let i = &config.integration;
    run.write_json("ledger.json", &ledger_json(&setup))?;
    let path = config.noise_path(config.noise.seed, sim.dt, i.t_final)?;
    let steps = RunOptions::steps_for(i.t_final, sim.dt);
    let tr = integrate_split(
        &config.initial_state(sim)?,
        &mut driver(&setup, Some(&path))?,
        sim,
        RunOptions::new(steps).every(i.sample_every),
    )?;
    let mut csv = String::from("t,psi_h_sq,linear_h_sq,nonlinear_h_sq,consistency\n");
    for s in &tr.samples {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            s.t, s.psi_h_sq, s.linear_h_sq, s.nonlinear_h_sq, s.consistency
        ));
    }
    run.write("split.csv", csv.as_bytes())?;
    let decay = linear_decay_check(&tr.samples, &setup.ledger);
    let consistency = tr.samples.iter().map(|s| s.consistency).fold(0.0, f64::max);
    run.write_json("linear_decay.json", &decay)?;
    let summary =
        json!({ "worst_ratio": decay.worst_ratio, "at_time": decay.at_time, "max_consistency": consistency });
    run.finish(
        "split",
        config,
        vec![config.noise.seed],
        decay.worst_ratio <= 1.02,
        summary,
    )
}

/// Attractor proxy along the noise seed's path, at the pullback step.
pub fn cmd_pullback(config: &Config, out: &Path) -> Result<RunManifest> {
    let mut run = Run::start(out)?;
    let p = &config.experiment.pullback;
    let setup = config.setup_with_dt(p.dt)?;
    let sim = &setup.sim;
    run.write_json("ledger.json", &ledger_json(&setup))?;
    let t_max = p.horizons.iter().cloned().fold(0.0, f64::max);
    let path = if sim.epsilon > 0.0 {
        Some(sweep_path(config.noise.seed, sim, t_max)?)
    } else {
        None
    };
    let initial = ball_cloud(sim, p.cloud_seed, p.radius, p.members);
    let seed = path.as_ref().map(|_| config.noise.seed);
    let est = attractor_estimate(
        &initial,
        path.as_ref(),
        sim,
        &p.horizons,
        config.estimate_options(),
        seed,
    )?;
    let manifest = est.cloud.save(&out.join("cloud"), "cloud")?;
    for m in 0..est.cloud.len() {
        run.outputs.push(format!("cloud/cloud_{m:04}.state"));
    }
    run.outputs.push(format!(
        "cloud/{}",
        manifest
            .file_name()
            .and_then(|s| s.to_str())
            .unwrap_or("cloud.json")
    ));
    run.write_json(
        "estimate.json",
        &json!({ "converged": est.converged, "curve": est.curve }),
    )?;
    let summary = json!({
        "converged": est.converged,
        "members": est.cloud.len(),
        "radius": est.cloud.radius(),
        "diameter": est.cloud.diameter(),
        "horizon": est.cloud.label.pullback_time,
    });
    run.finish(
        "pullback",
        config,
        vec![config.noise.seed, p.cloud_seed],
        est.converged,
        summary,
    )
}

pub fn cmd_sweep(config: &Config, out: &Path) -> Result<RunManifest> {
    let mut run = Run::start(out)?;
    let setup = config.setup_with_dt(config.experiment.pullback.dt)?;
    run.write_json("ledger.json", &ledger_json(&setup))?;
    let report = semicontinuity_sweep(&setup.sim, &config.sweep_spec())?;
    run.write_json("sweep.json", &report)?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    run.write("sweep.csv", &csv)?;
    let passed = report.monotone_within_noise && report.strictly_smaller_at_end;
    let summary = json!({
        "monotone_within_noise": report.monotone_within_noise,
        "strictly_smaller_at_end": report.strictly_smaller_at_end,
        "means": report.rows.iter().map(|r| r.mean).collect::<Vec<_>>(),
    });
    let mut seeds = config.experiment.sweep.seeds.clone();
    seeds.push(config.experiment.pullback.cloud_seed);
    run.finish("sweep", config, seeds, passed, summary)
}

fn report_summary(r: &VerifyReport) -> Value {
    json!({
        "level": r.level,
        "checks": r.checks.len(),
        "failed": r.checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect::<Vec<_>>(),
        "covered": r.covered,
    })
}

pub fn cmd_verify(config: &Config, level: Level, out: &Path) -> Result<RunManifest> {
    let mut run = Run::start(out)?;
    let report = run_suite(config, level, &out.join("scratch"))?;
    run.write_json("verify.json", &report)?;
    run.finish(
        "verify",
        config,
        Vec::new(),
        report.passed,
        report_summary(&report),
    )
}

pub fn cmd_oracle(config: &Config, out: &Path) -> Result<RunManifest> {
    let mut run = Run::start(out)?;
    let report = run_oracles(config)?;
    run.write_json("oracle.json", &report)?;
    run.finish(
        "oracle",
        config,
        Vec::new(),
        report.passed,
        report_summary(&report),
    )
}

/// Whether every output of two runs, except the timing sidecar, is
/// byte-identical.
pub fn outputs_identical(a: &Path, b: &Path) -> Result<bool> {
    let read = |dir: &Path| -> Result<RunManifest> {
        serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST))?).map_err(Error::from)
    };
    let (ma, mb) = (read(a)?, read(b)?);
    if ma.outputs != mb.outputs {
        return Ok(false);
    }
    for name in ma.outputs.iter().map(String::as_str).chain([MANIFEST]) {
        if name == TIMING {
            continue;
        }
        if fs::read(a.join(name))? != fs::read(b.join(name))? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Writes `value` as pretty JSON followed by a newline.
pub fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all((serde_json::to_string_pretty(value)? + "\n").as_bytes())?;
    w.flush()?;
    Ok(())
}
