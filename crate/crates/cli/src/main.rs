//! `sicfiber` command-line driver.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sicfiber::experiment::{emit_param_table, run_experiment, simulate_blocks, ExperimentConfig};
use sicfiber::Error;

#[derive(Parser)]
#[command(name = "sicfiber", version, about = "SIC receivers and achievable rates for nonlinear fiber channels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the transmitted and received symbols of one block per power.
    Simulate(Common),
    /// Fit the surrogate parameters of the fiber link at every power.
    FitParams(Common),
    /// Achievable rates at a single power.
    Air {
        #[command(flatten)]
        common: Common,
        /// Launch power in dBm; required when the config lists several.
        #[arg(long, allow_negative_numbers = true)]
        power: Option<f64>,
    },
    /// Achievable rates at every configured power.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path; defaults to the configured output, else stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.output {
            cfg.output = Some(out.clone());
        }
        if let Some(t) = self.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build_global()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        }
        Ok(cfg)
    }
}

fn emit(text: &str, path: Option<&Path>) -> Result<(), Error> {
    match path {
        Some(p) => {
            std::fs::write(p, text)?;
            eprintln!("wrote {}", p.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate(c) => {
            let cfg = c.load()?;
            emit(&simulate_blocks(&cfg)?, cfg.output.as_deref())
        }
        Command::FitParams(c) => {
            let cfg = c.load()?;
            emit(&emit_param_table(&cfg)?.to_tsv(), cfg.output.as_deref())
        }
        Command::Air { common, power } => {
            let mut cfg = common.load()?;
            match (power, cfg.powers_dbm.as_slice()) {
                (Some(p), _) => cfg.powers_dbm = vec![p],
                (None, [_]) => {}
                (None, _) => {
                    return Err(Error::Config(format!(
                        "config lists {} powers; pass --power or use `sweep`",
                        cfg.powers_dbm.len()
                    )))
                }
            }
            let out = run_experiment(&cfg)?;
            emit(&out.to_tsv(&cfg), cfg.output.as_deref())
        }
        Command::Sweep(c) => {
            let cfg = c.load()?;
            let out = run_experiment(&cfg)?;
            emit(&out.to_tsv(&cfg), cfg.output.as_deref())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sicfiber: {e}");
            ExitCode::FAILURE
        }
    }
}
