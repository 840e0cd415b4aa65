use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rcl_core::cli::{cmd_run, cmd_synth, cmd_validate, CliError, RunOverrides};

#[derive(Parser)]
#[command(name = "rcl", version, about = "Pseudo-replay class-incremental anomaly detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trial CSV from a stream config.
    Synth {
        #[arg(long)]
        config: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the strategy comparison described by an experiment config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Master seed (overrides `master_seed`).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        repetitions: Option<usize>,
    },
    /// Check a config and its data without training.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth { config, out } => {
            print!("{}", cmd_synth(&config, &out)?);
        }
        Command::Run {
            config,
            out,
            seed,
            repetitions,
        } => {
            let out = cmd_run(&config, &RunOverrides { out, seed, repetitions })?;
            println!("{}", out.markdown);
            println!("outputs written to {}", out.out_dir.display());
        }
        Command::Validate { config } => {
            print!("{}", cmd_validate(&config)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
