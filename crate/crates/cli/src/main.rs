use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod error;
mod render;
mod volume;

use commands::Overrides;
use dynpat::acs::Backend;
use dynpat::linsolve::{PrecondKind, SolverKind};
use error::{CliError, CliResult};

fn parse<T: FromStr>(s: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| e.to_string())
}

/// Dynamic photoacoustic reconstruction with joint image and motion estimation.
#[derive(Parser, Debug)]
#[command(name = "dynpat", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Noise seed for `simulate`, power-iteration seed for `reconstruct`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Image sub-problem solver: pdhg or admm.
    #[arg(long, global = true, value_parser = parse::<Backend>)]
    backend_p: Option<Backend>,
    /// Motion sub-problem solver: pdhg or admm.
    #[arg(long, global = true, value_parser = parse::<Backend>)]
    backend_v: Option<Backend>,
    /// Preconditioner for the motion linear systems: none, jacobi or ic0.
    #[arg(long, global = true, value_parser = parse::<PrecondKind>)]
    precond: Option<PrecondKind>,
    /// Krylov solver for the motion linear systems: cg or minres.
    #[arg(long, global = true, value_parser = parse::<SolverKind>)]
    solver: Option<SolverKind>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate phantom and noisy sub-sampled data.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Reconstruct from a simulated data set.
    Reconstruct {
        #[arg(long)]
        config: PathBuf,
    },
    /// Render an image or motion volume to PNGs.
    Render {
        #[arg(long)]
        input: PathBuf,
        /// Upper end of the gray window (default: volume maximum).
        #[arg(long)]
        window_max: Option<f64>,
        /// Remove the mean motion of each frame before rendering.
        #[arg(long)]
        translation_correct: bool,
        /// Width of the direction legend around flow images.
        #[arg(long, default_value_t = 6)]
        border: usize,
    },
    /// Compare linear solvers on motion systems.
    BenchSolvers {
        #[arg(long)]
        config: PathBuf,
    },
    /// Remove the per-frame mean from a motion volume.
    TranslationCorrect {
        #[arg(long)]
        input: PathBuf,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::config("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(e.to_string()))?;
    }
    let ov = Overrides {
        seed: cli.seed,
        backend_p: cli.backend_p,
        backend_v: cli.backend_v,
        precond: cli.precond,
        solver: cli.solver,
    };
    match &cli.command {
        Command::Simulate { config } => commands::simulate(config, &cli.out, &ov),
        Command::Reconstruct { config } => commands::reconstruct(config, &cli.out, &ov),
        Command::Render {
            input,
            window_max,
            translation_correct,
            border,
        } => commands::render(input, &cli.out, *window_max, *translation_correct, *border),
        Command::BenchSolvers { config } => commands::bench_solvers(config, &cli.out, &ov),
        Command::TranslationCorrect { input } => commands::translation_correct_cmd(input, &cli.out).map(|_| ()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dynpat: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
