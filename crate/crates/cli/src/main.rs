use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::bail;
use clap::{Parser, Subcommand};
use imh_cli::config::{ExperimentConfig, EXPERIMENTS};
use imh_cli::run::{cmd_eval, cmd_experiment, cmd_replay, cmd_sample, cmd_train, cmd_verify, run_config};
use imh_cli::verify::Suite;

/// Implicit Metropolis-Hastings: train discriminators, filter proposals, check bounds.
#[derive(Debug, Parser)]
#[command(name = "imh", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a discriminator and write snapshots and losses.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `training.seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the filtered chain of a configuration.
    Sample {
        #[arg(long)]
        config: PathBuf,
        /// Discriminator weights; needed unless the rule is analytic.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Chain length; `evaluation.chain_length` by default.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute snapshot metrics.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "checkpoint")]
        checkpoints: Vec<PathBuf>,
        /// Also evaluate the analytic density ratio.
        #[arg(long)]
        exact_ratio: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Randomized finite-state checks of the kernel and bound inequalities.
    Verify {
        /// Suites to run; all by default.
        #[arg(long = "suite", value_enum)]
        suites: Vec<Suite>,
        #[arg(long, default_value_t = 1000)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Re-check one dumped instance instead of running suites.
        #[arg(long)]
        replay: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train, evaluate and sample a named experiment or a single configuration.
    Experiment {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(EXPERIMENTS))]
        name: Option<String>,
        #[arg(long, conflicts_with = "name")]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(path: &Path, seed: Option<u64>) -> anyhow::Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        config.training.seed = s;
    }
    Ok(config)
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Train { config, seed, out } => {
            let report = cmd_train(&load(&config, seed)?, &out)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Sample {
            config,
            checkpoint,
            steps,
            seed,
            out,
        } => {
            let report = cmd_sample(&load(&config, seed)?, checkpoint.as_deref(), steps, &out)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Eval {
            config,
            checkpoints,
            exact_ratio,
            seed,
            out,
        } => {
            let records = cmd_eval(&load(&config, seed)?, &checkpoints, exact_ratio, &out)?;
            println!("{}", serde_json::to_string_pretty(&records)?);
        }
        Command::Verify {
            suites,
            instances,
            seed,
            replay,
            out,
        } => {
            let status = match replay {
                Some(path) => {
                    let (report, status) = cmd_replay(&path, out.as_deref())?;
                    println!("{}", serde_json::to_string_pretty(&report)?);
                    status
                }
                None => {
                    let out = out.unwrap_or_else(|| PathBuf::from("verify-out"));
                    let (report, status) = cmd_verify(&suites, seed, instances, &out)?;
                    for s in &report.suites {
                        println!("{:<12} {}/{} passed", s.suite.name(), s.passed, s.instances);
                    }
                    status
                }
            };
            return Ok(status.exit_code());
        }
        Command::Experiment {
            name,
            config,
            seed,
            out,
        } => match (name, config) {
            (Some(name), None) => {
                let report = cmd_experiment(&name, seed, &out)?;
                println!("{}", serde_json::to_string_pretty(&report.checks)?);
            }
            (None, Some(path)) => {
                let summary = run_config(&load(&path, seed)?, &out)?;
                println!("{}", serde_json::to_string_pretty(&summary.metrics)?);
            }
            _ => bail!("give an experiment name or --config"),
        },
    }
    Ok(0)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
