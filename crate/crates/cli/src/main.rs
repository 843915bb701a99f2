use std::path::PathBuf;
use std::process::ExitCode;

use adiabatic_cli::{commands, config, verify, Run};
use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "adiabatic",
    version,
    about = "Spectral experiments with adiabatically rescaled Laplacians"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Eigenvalues at each scale and the leafwise distribution.
    Spectrum(Common),
    /// Counting functions against the leafwise prediction over an (h, λ) grid.
    Sweep(Common),
    /// Heat traces against the leafwise prediction over (t, h).
    Heat(Common),
    /// Eigenvalue branches across the schedule and their limits.
    Branches(Common),
    /// Reduced-scale checks; the exit status is the first failing id.
    Verify(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn run(&self) -> Result<Run> {
        if let Some(n) = self.workers {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .context("--workers")?;
        }
        let loaded = config::load(&self.config)?;
        Ok(Run::new(loaded, self.out.clone(), self.seed))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Spectrum(c) => c.run().and_then(|r| commands::spectrum(&r)),
        Command::Sweep(c) => c.run().and_then(|r| commands::sweep(&r)),
        Command::Heat(c) => c.run().and_then(|r| commands::heat(&r)),
        Command::Branches(c) => c.run().and_then(|r| commands::branches(&r)),
        Command::Verify(c) => {
            return match c.run() {
                Ok(run) => {
                    let report = verify::verify(&run);
                    print!("{}", report.table());
                    match report.first_failure() {
                        Some(id) => {
                            eprintln!("first failing check: {id}");
                            ExitCode::from(id)
                        }
                        None => ExitCode::SUCCESS,
                    }
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::FAILURE
                }
            };
        }
    };
    match result {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
