use std::process::ExitCode;

use clap::{Parser, Subcommand};
use panda_cli::{run, Command, Flags, RunConfig};

#[derive(Parser)]
#[command(
    name = "panda",
    version,
    about = "Noise-augmented graphical models and GLMs"
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Estimate a graph from a CSV of node observations.
    FitGraph(Flags),
    /// Fit one regularized GLM.
    FitGlm(Flags),
    /// Fit one GLM and write confidence intervals.
    Infer(Flags),
    /// Generate a graph, its parameters and data.
    Simulate(Flags),
    /// Fit over a λ grid and score edges against a known graph.
    RocBench(Flags),
    /// Repeat simulate, fit and interval construction to estimate coverage.
    CoverageBench(Flags),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let (command, flags) = match cli.command {
        Sub::FitGraph(f) => (Command::FitGraph, f),
        Sub::FitGlm(f) => (Command::FitGlm, f),
        Sub::Infer(f) => (Command::Infer, f),
        Sub::Simulate(f) => (Command::Simulate, f),
        Sub::RocBench(f) => (Command::RocBench, f),
        Sub::CoverageBench(f) => (Command::CoverageBench, f),
    };
    let outcome = RunConfig::from_flags(command, &flags).and_then(|cfg| run(&cfg));
    match outcome {
        Ok(o) => {
            for f in &o.files {
                println!("{}", f.display());
            }
            if !o.converged {
                eprintln!("warning: did not converge within the iteration limit");
            }
            ExitCode::from(o.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
