//! `epit`: expectation propagation and MCMC for EIT and linear test problems.

mod commands;
mod config;
mod error;
mod output;
mod problem;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Config;
use error::CliError;
use output::{Out, Summary};

#[derive(Parser)]
#[command(name = "epit", version, about = "EP and MCMC posteriors for EIT and linear inverse problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Random seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Run EP (recursive linearization for EIT).
    Ep,
    /// Run multi-chain random-walk Metropolis.
    Mcmc,
    /// Compare the mean and std files of two output directories.
    Compare,
    /// Simulate EIT data on the data mesh.
    Synth,
    /// Generate a disk mesh.
    Mesh,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Ep => "ep",
            Command::Mcmc => "mcmc",
            Command::Compare => "compare",
            Command::Synth => "synth",
            Command::Mesh => "mesh",
        }
    }
}

fn run(cli: &Cli, summary: &mut Summary) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::parse("", Path::new("."))?,
    };
    let seed = match cli.seed {
        Some(s) => s,
        None => cfg.get_or("seed", 7u64)?,
    };
    summary.set("seed", seed);
    let out = Out::create(&cli.out)?;
    let result = match cli.command {
        Command::Ep => commands::ep(&cfg, seed, &out, summary),
        Command::Mcmc => commands::mcmc(&cfg, seed, &out, summary),
        Command::Compare => commands::compare(&cfg, &out, summary),
        Command::Synth => commands::synth(&cfg, seed, &out, summary),
        Command::Mesh => commands::mesh(&cfg, &out, summary),
    };
    let unused = cfg.unused();
    for k in &unused {
        eprintln!("warning: unused config key `{k}`");
    }
    summary.set("unused_keys", unused);
    result
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: cannot configure thread pool: {e}");
        }
    }
    let mut summary = Summary::new(cli.command.name());
    let result = run(&cli, &mut summary);
    let doc = summary.finish(result.as_ref().map(|_| ()));
    let text = serde_json::to_string_pretty(&doc).expect("summary serializes");
    let written = std::fs::create_dir_all(&cli.out).and_then(|_| std::fs::write(cli.out.join("summary.json"), text + "\n"));
    if let Err(e) = &written {
        eprintln!("error: cannot write summary.json: {e}");
    }
    match result {
        Ok(()) if written.is_ok() => ExitCode::SUCCESS,
        Ok(()) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
