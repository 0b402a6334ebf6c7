use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use viscoflow::cli::{self, RunManifest};
use viscoflow::config::Config;
use viscoflow::verify::Level;
use viscoflow::{Error, Result};

#[derive(Parser)]
#[command(
    name = "viscoflow",
    version,
    about = "Stochastic Navier-Stokes with fading memory on the periodic box"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON configuration, or a manifest from an earlier run.
    #[arg(long, global = true, env = "VISCOFLOW_CONFIG")]
    config: Option<PathBuf>,
    /// Noise seed, overriding `noise.seed`.
    #[arg(long, global = true, env = "VISCOFLOW_SEED")]
    seed: Option<u64>,
    #[arg(long, global = true, env = "VISCOFLOW_OUT", default_value = "out")]
    out: PathBuf,
    /// Worker threads for ensemble runs (default: all cores).
    #[arg(long, global = true, env = "VISCOFLOW_THREADS")]
    threads: Option<usize>,
    #[arg(long, global = true, env = "VISCOFLOW_LEVEL", value_enum, default_value_t = LevelArg::Fast)]
    level: LevelArg,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one trajectory.
    Simulate,
    /// Run the invariant suite.
    Verify,
    /// Integrate the linear/nonlinear split.
    Split,
    /// Estimate the pullback attractor.
    Pullback,
    /// Sweep the noise intensity toward zero.
    Sweep,
    /// Run the oracle comparisons.
    Oracle,
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    Fast,
    Full,
}

fn run(cli: &Cli) -> Result<RunManifest> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let mut config = match &cli.config {
        Some(path) => cli::load_config(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        config.noise.seed = seed;
    }
    let out = &cli.out;
    match cli.command {
        Command::Simulate => cli::cmd_simulate(&config, out),
        Command::Verify => {
            let level = match cli.level {
                LevelArg::Fast => Level::Fast,
                LevelArg::Full => Level::Full,
            };
            cli::cmd_verify(&config, level, out)
        }
        Command::Split => cli::cmd_split(&config, out),
        Command::Pullback => cli::cmd_pullback(&config, out),
        Command::Sweep => cli::cmd_sweep(&config, out),
        Command::Oracle => cli::cmd_oracle(&config, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(m) if m.passed => ExitCode::SUCCESS,
        Ok(m) => {
            eprintln!("{} failed: {}", m.command, m.summary);
            ExitCode::from(1)
        }
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
