use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod output;

use commands::{Context, Failure};
use config::ExperimentConfig;
use output::{Output, Provenance};

const EXIT_USAGE: u8 = 1;
const EXIT_FAILURE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "zpolicy", version, about = "Wind-aware Z-policy experiments for thermostatically controlled loads")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Stationary law of one load: densities, point masses, conservation check.
    Distribution,
    /// Sensitivity curves over the set-point grid.
    Curves,
    /// Optimal threshold distribution.
    Optimize,
    /// Event-driven simulation compared with the analytic finite-population cost.
    Simulate,
    /// Perfect samples of the joint stationary law.
    Cftp,
    /// Successive refinement of a piecewise distribution on simulated costs.
    Heuristic,
    /// Two-load dynamic programming solution and allocation structure.
    Hjb,
    /// Optimal against uniform set-points, analytic and simulated.
    Compare,
}

fn usage(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(EXIT_USAGE)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let Some(path) = &cli.config else {
        return usage("--config is required");
    };
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => return usage(format!("{}: {e}", path.display())),
    };
    let config = match ExperimentConfig::parse(&text) {
        Ok(c) => c,
        Err(e) => return usage(format!("{}: {e}", path.display())),
    };
    if let Some(n) = cli.workers {
        if n == 0 {
            return usage("--workers must be positive");
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return usage(e);
        }
    }
    let seed = cli.seed.unwrap_or(config.seed);
    let model = match config.model() {
        Ok(m) => m,
        Err(e) => return usage(e),
    };
    let out = match Output::new(&cli.out, Provenance::new(&text, seed)) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {}: {e}", cli.out.display());
            return ExitCode::from(EXIT_FAILURE);
        }
    };
    let mut ctx = Context {
        config: &config,
        model,
        seed,
        out,
    };
    let outcome = match cli.command {
        Command::Distribution => commands::distribution(&mut ctx),
        Command::Curves => commands::curves(&mut ctx),
        Command::Optimize => commands::optimize(&mut ctx),
        Command::Simulate => commands::simulate_cmd(&mut ctx),
        Command::Cftp => commands::cftp(&mut ctx),
        Command::Heuristic => commands::heuristic(&mut ctx),
        Command::Hjb => commands::hjb(&mut ctx),
        Command::Compare => commands::compare(&mut ctx),
    };
    match outcome {
        Ok(()) => {
            for p in ctx.out.written() {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(Failure::Compute(e)) => {
            eprintln!("error: {}: {e}", e.name());
            ExitCode::from(EXIT_FAILURE)
        }
        Err(Failure::Io(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}
