#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

use config::{ConfigError, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "phifno", version, about = "phi-FEM solver, dataset generation and FNO surrogate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run everything sequentially.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Generate a dataset of solved problem instances.
    Generate,
    /// Train the surrogate on a generated dataset.
    Train,
    /// Per-sample error of one or more checkpoints.
    Evaluate,
    /// Convergence study of the solver on a manufactured solution.
    Convergence,
    /// Run a checkpoint on one input.
    Predict,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<phifno_core::Error>() {
            return if e.is_io() {
                3
            } else if e.is_numerical() {
                2
            } else {
                1
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
    }
    1
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.deterministic {
        cfg.deterministic = true;
    }
    let out = match (cli.command, &cli.out) {
        (_, Some(dir)) => dir.clone(),
        (Command::Generate, None) => cfg.dataset.path.clone(),
        (_, None) => cfg.out.clone(),
    };
    match cli.command {
        Command::Generate => cfg.dataset.path = out.clone(),
        _ => cfg.out = out.clone(),
    }
    cfg.validate()?;
    match cli.command {
        Command::Generate => commands::generate(&cfg, &out),
        Command::Train => commands::train(&cfg, &out),
        Command::Evaluate => commands::evaluate(&cfg, &out),
        Command::Convergence => commands::convergence(&cfg, &out),
        Command::Predict => commands::predict(&cfg, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
