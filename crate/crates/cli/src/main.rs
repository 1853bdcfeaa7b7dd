//! `dps`: run diffusion posterior sampling experiments.
//!
//! Exit codes: 0 success, 1 configuration or I/O error, 2 numerical abort,
//! 3 failed verification checks.

mod artifacts;
mod config;
mod error;
mod plot;
mod sample;
mod setup;
mod sweep;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dps_core::verify::{self, VerifyOptions};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "dps", version, about = "Diffusion posterior sampling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Common {
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for concurrent restarts and sweep cells.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Reconstruct the configured images and write images and metrics.
    Sample { config: PathBuf },
    /// Run a cartesian sweep, e.g. `--sweep "zeta_prime=0.1,1;policy=constant"`.
    Ablate {
        config: PathBuf,
        /// Sweep spec, or a file containing one.
        #[arg(long)]
        sweep: String,
    },
    /// Train a score network by denoising score matching.
    Train { config: PathBuf },
    /// Run the numerical oracle checks.
    Verify,
}

fn cmd_verify(common: &Common) -> Result<(), CliError> {
    let mut opts = VerifyOptions::default();
    if let Some(s) = common.seed {
        opts.seed = s;
    }
    let report = verify::run(&opts);
    print!("{}", report.table());
    if let Some(out) = &common.out {
        artifacts::create_dir(out)?;
        std::fs::write(out.join("verify.txt"), report.table())?;
    }
    if report.all_passed() {
        println!("all checks passed");
        Ok(())
    } else {
        Err(CliError::ChecksFailed(report.failed().iter().map(|c| c.name.to_string()).collect()))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.common.workers {
        if n == 0 {
            return Err(CliError::Config("--workers must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot start worker pool: {e}")))?;
    }
    match &cli.command {
        Command::Sample { config } => sample::cmd_sample(config, &cli.common),
        Command::Ablate { config, sweep } => sweep::cmd_ablate(config, sweep, &cli.common),
        Command::Train { config } => train::cmd_train(config, &cli.common),
        Command::Verify => cmd_verify(&cli.common),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap's own exit code for usage errors would collide with 2
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dps: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
