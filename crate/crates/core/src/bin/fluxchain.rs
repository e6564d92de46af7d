use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fluxchain::io::{cmd_analyze, cmd_ensemble, cmd_evolve, cmd_solve, cmd_sweep, Overrides, Run, RunConfig};

#[derive(Parser)]
#[command(name = "fluxchain", version, about = "Excitation transport in fluxonium chains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed; overrides the file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Ensemble worker threads (default: available cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory; overrides the file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Cap ensembles at 200 realizations.
    #[arg(long, global = true)]
    quick: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Spectrum and matrix elements of one circuit.
    Solve,
    /// Time evolution of one chain.
    Evolve,
    /// Disorder ensemble with checkpointing.
    Ensemble,
    /// Flux sweep of one circuit and uniform-detuning chain sweep.
    Sweep,
    /// Re-aggregate existing ensemble checkpoints.
    Analyze,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Some(path) = cli.config.as_deref() else {
        eprintln!("error: --config <file> is required");
        return ExitCode::from(2);
    };
    let overrides = Overrides {
        seed: cli.seed,
        workers: cli.workers,
        out_dir: cli.out.clone(),
        quick: cli.quick,
    };
    let result = RunConfig::load(path).and_then(|cfg| Run::new(cfg, &overrides)).and_then(|run| {
        match cli.command {
            Command::Solve => cmd_solve(&run),
            Command::Evolve => cmd_evolve(&run),
            Command::Ensemble => cmd_ensemble(&run),
            Command::Sweep => cmd_sweep(&run),
            Command::Analyze => cmd_analyze(&run),
        }
    });
    match result {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 2 } else { 1 })
        }
    }
}
