use std::path::PathBuf;

use clap::{Parser, Subcommand};
use symforge::cli;
use symforge::systems::SystemId;

/// Discover hidden symmetries by learning coordinate transformations.
#[derive(Parser)]
#[command(name = "symforge", version)]
struct Args {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a transformation from a JSON config and write artifacts.
    Discover {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a system's closed-form transformation and field derivatives.
    Verify {
        #[arg(long)]
        system: SystemId,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Finite-difference checks on random small networks.
    CheckGrads {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() {
    let code = match Args::parse().cmd {
        Cmd::Discover { config, seed, out } => cli::discover(&config, seed, out.as_deref()),
        Cmd::Verify { system, seed } => cli::verify(system, seed),
        Cmd::CheckGrads { seed } => cli::check_grads(seed),
    };
    std::process::exit(code);
}
