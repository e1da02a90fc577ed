use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tlens_core::experiment::{self, ExperimentConfig, RunOptions};

/// Train small dense networks with telescoping instrumentation.
///
/// Relative dataset paths in configs resolve against `TLENS_DATA_DIR`.
#[derive(Debug, Parser)]
#[command(name = "tlens", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every seed of an experiment config.
    Run {
        config: PathBuf,
        /// Write a gnuplot script next to the summary CSV.
        #[arg(long)]
        emit_gnuplot: bool,
        /// Suppress per-record progress on stderr.
        #[arg(long, short)]
        quiet: bool,
    },
    /// Continue an experiment from one of its checkpoints.
    Resume {
        checkpoint: PathBuf,
        config: PathBuf,
        #[arg(long)]
        emit_gnuplot: bool,
        #[arg(long, short)]
        quiet: bool,
    },
    /// Check a config without running it.
    Validate { config: PathBuf },
}

fn load(path: &Path) -> tlens_core::Result<ExperimentConfig> {
    let cfg = ExperimentConfig::load(path)?;
    cfg.validate()?;
    Ok(cfg)
}

fn report(out: &experiment::Outcome) {
    for log in &out.logs {
        println!("log      {}", log.display());
    }
    println!("summary  {}", out.summary_path.display());
    if let Some(p) = &out.plot {
        println!("plot     {}", p.display());
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            emit_gnuplot,
            quiet,
        } => load(&config)
            .and_then(|cfg| {
                experiment::run(
                    &cfg,
                    &RunOptions {
                        emit_gnuplot,
                        progress: !quiet,
                    },
                )
            })
            .map(|o| report(&o)),
        Command::Resume {
            checkpoint,
            config,
            emit_gnuplot,
            quiet,
        } => load(&config)
            .and_then(|cfg| {
                experiment::resume(
                    &checkpoint,
                    &cfg,
                    &RunOptions {
                        emit_gnuplot,
                        progress: !quiet,
                    },
                )
            })
            .map(|o| report(&o)),
        Command::Validate { config } => load(&config).map(|cfg| {
            println!(
                "{}: valid {} config",
                config.display(),
                cfg.experiment.kind.name()
            );
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tlens: {e}");
            ExitCode::FAILURE
        }
    }
}
