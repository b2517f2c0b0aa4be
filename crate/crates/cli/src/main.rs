//! `difformer`: diffusion sweeps, invariant audits, training and evaluation from the shell.
//!
//! Exit codes: 0 success, 1 runtime or data error, 2 usage error, 3 audit violation.

mod commands;
mod config;
mod error;
mod manifest;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{audit, diffuse, eval, landscape, synth, train};

#[derive(Debug, Parser)]
#[command(name = "difformer", version, about = "Energy-constrained graph diffusion and DIFFormer models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    Synth(synth::Flags),
    Diffuse(diffuse::Flags),
    Audit(audit::Flags),
    Train(train::Flags),
    Eval(eval::Flags),
    Landscape(landscape::Flags),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Synth(f) => synth::run(f),
        Command::Diffuse(f) => diffuse::run(f),
        Command::Audit(f) => audit::run(f),
        Command::Train(f) => train::run(f),
        Command::Eval(f) => eval::run(f),
        Command::Landscape(f) => landscape::run(f),
    };
    outcome.unwrap_or_else(|e| {
        eprintln!("difformer: {e}");
        ExitCode::from(e.exit_code())
    })
}
