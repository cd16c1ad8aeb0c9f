//! Command-line driver for the plume simulation, injection, retrieval
//! and evaluation pipeline.

mod commands;
mod runlog;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use plumekit::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "plumekit",
    version,
    about = "Synthetic methane plume pipeline: simulate, inject, retrieve, evaluate"
)]
struct Cli {
    /// Flat key = value configuration file.
    #[arg(long, global = true, env = "PLUMEKIT_CONFIG")]
    config: Option<PathBuf>,

    /// Root random seed (overrides the config file).
    #[arg(long, global = true, env = "PLUMEKIT_SEED")]
    seed: Option<u64>,

    /// Worker threads (0 = all cores; overrides the config file).
    #[arg(long, global = true, env = "PLUMEKIT_THREADS")]
    threads: Option<usize>,

    /// Output directory (overrides the config file).
    #[arg(long, global = true, env = "PLUMEKIT_OUT")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the methane transmittance-ratio lookup table.
    BuildLut,
    /// Simulate a plume tile dataset.
    Simulate,
    /// Inject plumes into background radiance at sampled emission rates.
    Inject,
    /// Run a retrieval backend over injected tiles.
    Retrieve {
        /// Backend: "matched-filter" or "external".
        #[arg(long, default_value = "matched-filter")]
        backend: String,
    },
    /// Run granule-scale inference: blending, consolidation, filters.
    Granule,
    /// Spectral-fit vetting of granule records.
    SpectralFit {
        /// Also write per-plume fitted-vs-observed spectrum CSVs.
        #[arg(long)]
        spectra: bool,
    },
    /// Evaluate predictions against ground-truth tiles.
    Evaluate,
    /// Summarize report files in the output directory.
    Report,
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(threads) = cli.threads {
        config.threads = threads;
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match load_config(&cli) {
        Ok(c) => c,
        Err(err) => {
            eprintln!("error: {err:#}");
            return ExitCode::from(1);
        }
    };
    if config.threads > 0 {
        if let Err(err) = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build_global()
        {
            eprintln!("warning: thread pool already initialized: {err}");
        }
    }

    let result = match &cli.command {
        Command::BuildLut => commands::build_lut(&config),
        Command::Simulate => commands::simulate(&config),
        Command::Inject => commands::inject(&config),
        Command::Retrieve { backend } => commands::retrieve(&config, backend),
        Command::Granule => commands::granule(&config),
        Command::SpectralFit { spectra } => commands::spectral_fit(&config, *spectra),
        Command::Evaluate => commands::evaluate(&config),
        Command::Report => commands::report(&config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
