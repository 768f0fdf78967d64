use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use impdiff::config::{Experiment, ExperimentConfig};
use impdiff::output::{compare_files, config_from_manifest, emit_outputs, golden_path};
use impdiff::{golden, run_experiment};

#[derive(Parser)]
#[command(name = "impdiff", version, about = "Optimization through sampling: experiments and oracles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its artifacts.
    Run {
        /// langevin-reward, langevin-scratch, gauss1d, rates or finite-state
        experiment: Experiment,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Dotted `key=value`, e.g. `algorithm.kind=nested`.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Golden oracle file.
    Golden {
        #[command(subcommand)]
        action: GoldenAction,
    },
    /// Byte-compare two traces.
    Compare { a: PathBuf, b: PathBuf },
    /// Re-run the configuration stored in a manifest.
    Rerun {
        manifest: PathBuf,
        #[arg(long, default_value = "out-rerun")]
        out: PathBuf,
    },
    /// Print the default configuration of an experiment as TOML.
    Defaults { experiment: Experiment },
}

#[derive(Subcommand)]
enum GoldenAction {
    Regenerate {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let result = run_experiment(cfg).with_context(|| format!("running {}", cfg.experiment))?;
    let files = emit_outputs(&result, out)?;
    println!("{}", files.metrics.display());
    println!("{}", serde_json::to_string_pretty(&result.summary)?);
    Ok(())
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            experiment,
            config,
            seed,
            out,
            overrides,
        } => {
            let cfg = ExperimentConfig::load(experiment, config.as_deref(), &overrides, Some(seed))?;
            run(&cfg, &out)?;
        }
        Command::Golden {
            action: GoldenAction::Regenerate { out },
        } => {
            let path = out.unwrap_or_else(golden_path);
            golden::regenerate(&path)?;
            println!("{}", path.display());
        }
        Command::Compare { a, b } => {
            if let Some((line, x, y)) = compare_files(&a, &b)? {
                println!("differ at line {line}:\n  {x}\n  {y}");
                return Ok(ExitCode::FAILURE);
            }
            println!("identical");
        }
        Command::Rerun { manifest, out } => {
            let cfg = config_from_manifest(&manifest)?;
            run(&cfg, &out)?;
        }
        Command::Defaults { experiment } => {
            print!("{}", ExperimentConfig::defaults(experiment).to_toml());
        }
    }
    Ok(ExitCode::SUCCESS)
}
