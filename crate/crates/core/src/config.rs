//! Versioned JSON run configuration.
//!
//! Every section has desk-scale defaults, so `{"version": 1}` is a complete
//! configuration. Unknown keys are errors.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::attractor::{EstimateOptions, SweepSpec};
use crate::error::{invalid, Error, Result};
use crate::memory::{AgeGrid, AgeInterpolation, KernelForm, KernelSpec, TransportScheme};
use crate::profiles::Profile;
use crate::solver::{RunOptions, SimConfig, SimState, Terms};
use crate::spaces::{Space, SpectralField, SpectralGrid};
use crate::stochastic::{c_tilde, choose_sigma, ConstantsLedger, NoisePath};
use crate::trilinear::{measure_ladyzhenskaya_constant, LadyzhenskayaEstimate};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub version: u32,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub kernel: KernelSection,
    #[serde(default)]
    pub physics: PhysicsSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub integration: IntegrationSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            grid: GridSection::default(),
            kernel: KernelSection::default(),
            physics: PhysicsSection::default(),
            noise: NoiseSection::default(),
            integration: IntegrationSection::default(),
            experiment: ExperimentSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub length: f64,
    pub n: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            length: 2.0 * PI,
            n: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSection {
    pub form: KernelForm,
    pub delta: f64,
    pub ages: usize,
    /// Oldest age in units of `1 / delta`.
    pub horizon: f64,
    pub interpolation: AgeInterpolation,
    pub transport: TransportScheme,
}

impl Default for KernelSection {
    fn default() -> Self {
        Self {
            form: KernelForm::Exponential,
            delta: 1.0,
            ages: 64,
            horizon: 20.0,
            interpolation: AgeInterpolation::default(),
            transport: TransportScheme::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsSection {
    pub nu: f64,
    pub forcing: Profile,
}

impl Default for PhysicsSection {
    fn default() -> Self {
        Self {
            nu: 0.05,
            forcing: Profile::GaussianVortex {
                center: [2.0, 3.0],
                width: 0.6,
                order: 1,
                amplitude: 0.5,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub epsilon: f64,
    pub profile: Profile,
    /// Fixed OU rate; chosen from the constants at `sigma_epsilon` when absent.
    pub sigma: Option<f64>,
    pub sigma_epsilon: f64,
    pub seed: u64,
    /// Burn-in of the OU coefficient before the run starts.
    pub burn_in: f64,
    pub ladyzhenskaya_trials: usize,
    pub ladyzhenskaya_seed: u64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            epsilon: 0.0,
            profile: Profile::GaussianVortex {
                center: [4.0, 3.5],
                width: 0.6,
                order: 0,
                amplitude: 0.05,
            },
            sigma: None,
            sigma_epsilon: 1.0,
            seed: 1,
            burn_in: 20.0,
            ladyzhenskaya_trials: 200,
            ladyzhenskaya_seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegrationSection {
    pub dt: f64,
    pub t_final: f64,
    pub sample_every: usize,
    /// Write a state checkpoint every this many samples (0 disables).
    pub checkpoint_every: usize,
    pub blowup_factor: f64,
    pub convection: bool,
    pub memory: bool,
}

impl Default for IntegrationSection {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_final: 5.0,
            sample_every: 10,
            checkpoint_every: 0,
            blowup_factor: 1e12,
            convection: true,
            memory: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialVelocity {
    Zero,
    /// Seeded random field rescaled to `norm` in `H`.
    Random {
        seed: u64,
        decay: f64,
        norm: f64,
    },
    Profile {
        profile: Profile,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialHistory {
    /// `eta = 0`.
    #[default]
    Rest,
    /// The history of a past velocity equal to the initial one.
    ConstantPast,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSection {
    pub velocity: InitialVelocity,
    pub history: InitialHistory,
}

impl Default for InitialSection {
    fn default() -> Self {
        Self {
            velocity: InitialVelocity::Random {
                seed: 11,
                decay: 1.0,
                norm: 0.5,
            },
            history: InitialHistory::Rest,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PullbackSection {
    /// Step used by pullback and sweep runs, which are long.
    pub dt: f64,
    pub members: usize,
    /// `H` radius of the initial ball.
    pub radius: f64,
    pub cloud_seed: u64,
    pub horizons: Vec<f64>,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for PullbackSection {
    fn default() -> Self {
        Self {
            dt: 2e-2,
            members: 32,
            radius: 2.5,
            cloud_seed: 7,
            horizons: vec![20.0, 30.0],
            rel_tol: 1e-3,
            abs_tol: 1e-10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub epsilons: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            epsilons: vec![1.0, 0.5, 0.2, 0.1],
            seeds: vec![1, 2, 3, 4],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub initial: InitialSection,
    pub pullback: PullbackSection,
    pub sweep: SweepSection,
}

/// A configuration resolved into solver inputs.
#[derive(Clone, Debug)]
pub struct Setup {
    pub sim: SimConfig,
    pub ledger: ConstantsLedger,
    pub ladyzhenskaya: LadyzhenskayaEstimate,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {}, expected {CONFIG_VERSION}",
                cfg.version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn grid(&self) -> Result<Arc<SpectralGrid>> {
        SpectralGrid::new(self.grid.length, self.grid.n)
    }

    pub fn kernel(&self) -> Result<KernelSpec> {
        let k = &self.kernel;
        match k.form {
            KernelForm::Exponential => KernelSpec::exponential(k.delta),
            KernelForm::InversePower { exponent } => KernelSpec::inverse_power(k.delta, exponent),
        }
    }

    /// Solver configuration at step `dt`, with `sigma` from the constants
    /// ledger unless fixed in the config.
    pub fn setup_with_dt(&self, dt: f64) -> Result<Setup> {
        if !(dt > 0.0) {
            return Err(invalid("dt", format!("must be positive, got {dt}")));
        }
        let grid = self.grid()?;
        let kernel = self.kernel()?;
        let k = &self.kernel;
        let ages = AgeGrid::graded(
            &kernel,
            dt,
            k.horizon / k.delta,
            k.ages,
            k.interpolation,
            k.transport,
        )?;
        let f = self.physics.forcing.build(&grid)?;
        let h = self.noise.profile.build(&grid)?;
        let ladyzhenskaya = measure_ladyzhenskaya_constant(
            &grid,
            self.noise.ladyzhenskaya_trials,
            self.noise.ladyzhenskaya_seed,
        )?;
        let mut ledger = ConstantsLedger::new(
            self.physics.nu,
            grid.lambda1(),
            kernel.delta(),
            self.noise.epsilon,
        )?
        .with_measured(ladyzhenskaya.c_hat, c_tilde(&h));
        let sigma = match self.noise.sigma {
            Some(s) => s,
            None => choose_sigma(&ledger, self.noise.sigma_epsilon)?,
        };
        ledger.sigma = Some(sigma);
        let i = &self.integration;
        let sim = SimConfig {
            grid,
            kernel,
            ages: Arc::new(ages),
            nu: self.physics.nu,
            f,
            h,
            epsilon: self.noise.epsilon,
            sigma,
            dt,
            terms: Terms {
                convection: i.convection,
                memory: i.memory,
            },
            blowup_factor: i.blowup_factor,
        };
        sim.validate()?;
        Ok(Setup {
            sim,
            ledger,
            ladyzhenskaya,
        })
    }

    pub fn setup(&self) -> Result<Setup> {
        self.setup_with_dt(self.integration.dt)
    }

    /// Initial state at `t = 0`.
    pub fn initial_state(&self, sim: &SimConfig) -> Result<SimState> {
        let init = &self.experiment.initial;
        let v = match &init.velocity {
            InitialVelocity::Zero => SpectralField::zeros(&sim.grid),
            InitialVelocity::Random { seed, decay, norm } => {
                let mut r = SpectralField::random(&sim.grid, *seed, *decay);
                r.dealias();
                let n = r.norm(Space::H);
                if n > 0.0 {
                    r.scaled(norm / n)
                } else {
                    r
                }
            }
            InitialVelocity::Profile { profile } => profile.build(&sim.grid)?,
        };
        Ok(match init.history {
            InitialHistory::Rest => SimState::at_rest_history(sim, v, 0.0),
            InitialHistory::ConstantPast => SimState::with_constant_past(sim, v, 0.0),
        })
    }

    /// Wiener path covering the burn-in before `0` and the run on
    /// `[0, duration]`.
    pub fn noise_path(&self, seed: u64, dt: f64, duration: f64) -> Result<NoisePath> {
        let burn = RunOptions::steps_for(self.noise.burn_in, dt) as f64 * dt;
        let end = (RunOptions::steps_for(duration, dt) + 1) as f64 * dt;
        NoisePath::sample_wiener(seed, -burn, end, dt)
    }

    pub fn sweep_spec(&self) -> SweepSpec {
        let p = &self.experiment.pullback;
        SweepSpec {
            epsilons: self.experiment.sweep.epsilons.clone(),
            seeds: self.experiment.sweep.seeds.clone(),
            members: p.members,
            radius: p.radius,
            horizons: p.horizons.clone(),
            estimate: self.estimate_options(),
            cloud_seed: p.cloud_seed,
        }
    }

    pub fn estimate_options(&self) -> EstimateOptions {
        let p = &self.experiment.pullback;
        EstimateOptions {
            rel_tol: p.rel_tol,
            abs_tol: p.abs_tol,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn version_alone_gives_the_defaults() {
        let cfg = Config::from_json(r#"{"version": 1}"#).unwrap();
        assert_eq!(cfg, Config::default());
        let again = Config::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_keys_are_errors_naming_the_key() {
        let err =
            Config::from_json(r#"{"version": 1, "physics": {"nu": 0.05, "viscosity": 1}}"#).unwrap_err();
        assert!(err.to_string().contains("viscosity"), "{err}");
        let err = Config::from_json(r#"{"version": 1, "extras": {}}"#).unwrap_err();
        assert!(err.to_string().contains("extras"), "{err}");
    }

    #[test]
    fn other_versions_are_rejected() {
        assert!(Config::from_json(r#"{"version": 2}"#).is_err());
        assert!(Config::from_json(r#"{}"#).is_err());
    }

    #[test]
    fn setup_derives_sigma_from_the_constants() {
        let mut cfg = Config::default();
        cfg.grid.n = 16;
        cfg.noise.ladyzhenskaya_trials = 20;
        let s = cfg.setup().unwrap();
        let expect = choose_sigma(&s.ledger, 1.0).unwrap();
        assert_eq!(s.sim.sigma, expect);
        assert_eq!(s.ledger.sigma, Some(expect));
        assert!(s.sim.f.is_band_limited() && s.sim.h.is_band_limited());
        cfg.noise.sigma = Some(3.0);
        assert_eq!(cfg.setup().unwrap().sim.sigma, 3.0);
    }

    #[test]
    fn random_initial_data_has_the_requested_norm() {
        let mut cfg = Config::default();
        cfg.grid.n = 16;
        cfg.noise.ladyzhenskaya_trials = 4;
        let s = cfg.setup().unwrap();
        let st = cfg.initial_state(&s.sim).unwrap();
        assert!((st.v.norm(Space::H) - 0.5).abs() < 1e-12);
        assert!(st.v.is_band_limited());
        assert_eq!(st.eta.norm_m(), 0.0);
    }

    #[test]
    fn noise_path_covers_burn_in_and_run() {
        let cfg = Config::default();
        let p = cfg.noise_path(3, 0.01, 1.0).unwrap();
        assert!(p.time(p.first_index()) <= -20.0 + 1e-9);
        assert!(p.time(p.end_index()) >= 1.0);
    }
}
