use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use framemind::run::{cmd_ablate_bonus, cmd_eval, cmd_gen, cmd_train, CommandError};
use framemind::toyworld::DEFAULT_DURATION;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "framemind", version, about = "Toy multi-turn video QA: generate, train, evaluate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic video dataset.
    Gen {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Video length in seconds.
        #[arg(long, default_value_t = DEFAULT_DURATION)]
        duration: f64,
    },
    /// Train the toy policy from a run config.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Greedy evaluation of a checkpoint on every ladder rung.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Train twice, with and without the tool exploration bonus.
    AblateBonus {
        #[arg(long)]
        config: PathBuf,
    },
}

fn print<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("report serializes"));
}

fn run(cli: Cli) -> Result<(), CommandError> {
    match cli.command {
        Command::Gen { count, seed, out, duration } => {
            if !(duration.is_finite() && duration >= 10.0) {
                return Err(CommandError::Usage(format!("--duration must be at least 10 s, got {duration}")));
            }
            print(&cmd_gen(count, seed, duration, &out)?)
        }
        Command::Train { config } => print(&cmd_train(&config)?),
        Command::Eval { checkpoint, dataset } => print(&cmd_eval(&checkpoint, &dataset)?),
        Command::AblateBonus { config } => print(&cmd_ablate_bonus(&config)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
