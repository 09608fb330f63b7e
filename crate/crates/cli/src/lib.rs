//! Batch front end for the `kooplab` library: configuration, pipeline
//! stages and packaged demos behind the `kooplab` binary.

pub mod config;
pub mod demo;
pub mod pipeline;

use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use config::{ConfigError, ExperimentConfig, Overrides};

/// Exit status for a consistent check or a successful command.
pub const EXIT_OK: u8 = 0;
/// Exit status when a check finds the model inconsistent.
pub const EXIT_INCONSISTENT: u8 = 1;
/// Exit status for invalid arguments or configuration.
pub const EXIT_USAGE: u8 = 2;
/// Exit status for failures while running a valid configuration.
pub const EXIT_FAILURE: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "kooplab", version, about = "Fit Koopman models of controlled systems and check their consistency")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Output directory (overrides the config's `output`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Dataset seed (overrides the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Verdict tolerance on residuals (overrides the config).
    #[arg(long, global = true)]
    pub tolerance: Option<f64>,
    /// Ridge parameter for every formulation (overrides the config).
    #[arg(long, global = true)]
    pub ridge: Option<f64>,
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides { seed: self.seed, tolerance: self.tolerance, ridge: self.ridge }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a snapshot dataset (CSV plus JSON envelope).
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Fit every configured formulation; generates the dataset when none is given.
    Fit {
        #[arg(long)]
        config: PathBuf,
        /// Dataset envelope written by `simulate`.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Evaluate consistency conditions; exits 0 when consistent, 1 otherwise.
    Check {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Simulate, fit, roll out on held-out trajectories and check every formulation.
    Compare {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a packaged experiment.
    Demo {
        /// One of the names printed by `--list`.
        name: Option<String>,
        #[arg(long)]
        list: bool,
    },
}

/// What a command printed and the exit status it asks for.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub stdout: String,
    pub status: u8,
}

impl Outcome {
    fn ok(stdout: String) -> Self {
        Self { stdout, status: EXIT_OK }
    }
}

fn load(path: &Path, common: &CommonArgs) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(path)?;
    config.apply(common.overrides())?;
    Ok(config)
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    let common = &cli.common;
    match &cli.command {
        Command::Simulate { config } => {
            let config = load(config, common)?;
            let out = config.output_dir(common.out.as_deref());
            Ok(Outcome::ok(pipeline::simulate(&config, &out)?.report))
        }
        Command::Fit { config, dataset } => {
            let config = load(config, common)?;
            let out = config.output_dir(common.out.as_deref());
            let mut stdout = String::new();
            let data = match dataset {
                Some(path) => pipeline::load_dataset(path)?,
                None => {
                    let sim = pipeline::simulate(&config, &out)?;
                    stdout.push_str(&sim.report);
                    sim.dataset
                }
            };
            stdout.push_str(&pipeline::fit(&config, &data, &out)?.report);
            Ok(Outcome::ok(stdout))
        }
        Command::Check { config, model } => {
            let config = load(config, common)?;
            let out = config.output_dir(common.out.as_deref());
            let model = pipeline::load_model(model)?;
            let label = model.variant().as_str();
            let checked = pipeline::check(&config, &model, &out, label)?;
            let status = if checked.consistent() { EXIT_OK } else { EXIT_INCONSISTENT };
            Ok(Outcome { stdout: checked.report, status })
        }
        Command::Compare { config } => {
            let config = load(config, common)?;
            let out = config.output_dir(common.out.as_deref());
            Ok(Outcome::ok(pipeline::compare(&config, &out)?.report))
        }
        Command::Demo { list: true, .. } => Ok(Outcome::ok(demo::DEMOS.join("\n") + "\n")),
        Command::Demo { name: None, .. } => Err(ConfigError::new(
            "demo",
            format!("a demo name is required; available: {}", demo::DEMOS.join(", ")),
        )
        .into()),
        Command::Demo { name: Some(name), .. } => {
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from("kooplab-out").join(name));
            let outcome = demo::run_demo(name, &out, common.overrides())?;
            Ok(Outcome::ok(format!("demo {name}: {}\n{}", outcome.verdict, outcome.text)))
        }
    }
}

/// Maps an error to its exit status: configuration problems are usage
/// errors, everything else is a run failure.
pub fn error_status(err: &anyhow::Error) -> u8 {
    if err.chain().any(|e| e.downcast_ref::<ConfigError>().is_some()) {
        EXIT_USAGE
    } else {
        EXIT_FAILURE
    }
}
