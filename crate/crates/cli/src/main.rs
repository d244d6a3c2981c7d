use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use fbfl_core::experiment::{run_experiment, summarize, ExperimentConfig, Summary};

#[derive(Parser)]
#[command(name = "fbfl", version, about = "Field-based federated learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config.
    Run {
        /// Config file; optional with --print-defaults.
        config: Option<PathBuf>,
        /// Output directory for CSV files.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Comma-separated seeds, overriding the config.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Print the effective configuration (defaults filled in) and exit.
        #[arg(long)]
        print_defaults: bool,
    },
    /// Aggregate raw per-seed CSV files in a directory.
    Summarize { dir: PathBuf },
}

fn report(summary: &Summary) {
    for alg in &summary.algorithms {
        let acc = alg.series("val_accuracy");
        let leaders = alg.series("leaders");
        println!(
            "{}: {} seed(s), {} rounds, final val_accuracy {:.4}, final leaders {:.1}",
            alg.algorithm,
            alg.seeds,
            alg.rows.len().saturating_sub(1),
            acc.last().copied().unwrap_or(f64::NAN),
            leaders.last().copied().unwrap_or(f64::NAN),
        );
    }
    for t in &summary.trends {
        println!(
            "trend {} {}: {:.4} -> {:.4}, max drop {:.4}, non-decreasing {}",
            t.algorithm, t.metric, t.first, t.last, t.max_drop, t.non_decreasing
        );
    }
    for f in &summary.files {
        println!("wrote {}", f.display());
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            out,
            seeds,
            print_defaults,
        } => {
            let mut cfg = match &config {
                Some(path) => ExperimentConfig::load(path)?,
                None if print_defaults => ExperimentConfig::default(),
                None => bail!("a config file is required"),
            };
            if let Some(seeds) = seeds {
                cfg.seeds = seeds;
                cfg.validate()?;
            }
            if print_defaults {
                print!("{}", cfg.to_toml());
                return Ok(());
            }
            let output = run_experiment(&cfg, &out).with_context(|| format!("running {}", cfg.algorithm.name()))?;
            for p in &output.raw {
                println!("wrote {}", p.display());
            }
            report(&output.summary);
        }
        Command::Summarize { dir } => report(&summarize(&dir)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
