mod artifacts;
mod commands;
mod config;
mod error;

use artifacts::{sha256_hex, Artifacts};
use clap::{Args, Parser, Subcommand};
use config::{ExperimentConfig, Overrides, Resolved};
use error::CliError;
use std::path::PathBuf;
use std::process::ExitCode;

/// Simulation and analysis of diffusions perturbed by their running extremes.
#[derive(Parser)]
#[command(name = "psde", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check parameters and report rho, t0 and the smoothness threshold.
    Validate(Common),
    /// Simulate paths and write them as CSV.
    Simulate(Common),
    /// Compare the per-step and Picard schemes on shared drivers.
    PicardCompare(Common),
    /// Derivative field, H-norm report and finite-difference check.
    Malliavin(Common),
    /// Terminal-value ensemble with KDE, atom scan and KS test.
    Density(Common),
    /// Pathwise check of the reduction to unit diffusion.
    LampertiCheck(Common),
    /// Oscillation constants and H-norm lower bounds.
    Constants(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to `psde-out/<subcommand>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of paths.
    #[arg(long)]
    paths: Option<usize>,
    /// Number of time steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Suppress the summary on stdout.
    #[arg(long)]
    quiet: bool,
}

type Runner = fn(&Resolved, &mut Artifacts) -> Result<serde_json::Value, CliError>;

impl Command {
    fn parts(&self) -> (&'static str, &Common, Runner) {
        match self {
            Command::Validate(c) => ("validate", c, commands::validate),
            Command::Simulate(c) => ("simulate", c, commands::simulate_paths),
            Command::PicardCompare(c) => ("picard-compare", c, commands::picard_compare),
            Command::Malliavin(c) => ("malliavin", c, commands::malliavin),
            Command::Density(c) => ("density", c, commands::density),
            Command::LampertiCheck(c) => ("lamperti-check", c, commands::lamperti_check),
            Command::Constants(c) => ("constants", c, commands::constants),
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("PSDE_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Config(format!("PSDE_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    let (name, common, runner) = cli.command.parts();
    let mut cfg = ExperimentConfig::load(&common.config)?;
    cfg.apply(&Overrides {
        seed: common.seed,
        paths: common.paths,
        steps: common.steps,
        out: common.out.clone(),
    });
    let out_dir = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("psde-out").join(name));
    let fingerprint = {
        let mut canonical = cfg.clone();
        canonical.output_dir = None;
        sha256_hex(serde_json::to_string(&canonical).expect("config serializes").as_bytes())
    };
    let resolved = cfg.resolve()?;
    let mut artifacts = Artifacts::create(&out_dir, name, fingerprint)?;
    let summary = runner(&resolved, &mut artifacts)?;
    artifacts.finish()?;
    if !common.quiet {
        println!("{}", serde_json::to_string_pretty(&summary).expect("plain JSON"));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
