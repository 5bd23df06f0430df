use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use rdg_core::runner::{run_text, Command, Flags};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    Solve,
    Oracle,
    Converge,
    PasteCheck,
    SdeCheck,
    Sweep,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Solve => Command::Solve,
            Cmd::Oracle => Command::Oracle,
            Cmd::Converge => Command::Converge,
            Cmd::PasteCheck => Command::PasteCheck,
            Cmd::SdeCheck => Command::SdeCheck,
            Cmd::Sweep => Command::Sweep,
        }
    }
}

/// Robust Dynkin games on scenario trees.
#[derive(Debug, Parser)]
#[command(name = "rdg", version)]
struct Cli {
    command: Cmd,
    /// Game spec (JSON); optional for `sweep`.
    spec: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "n-max")]
    n_max: Option<u32>,
    #[arg(long)]
    count: Option<usize>,
    /// Write per-node values as CSV.
    #[arg(long = "dump-values")]
    dump_values: Option<PathBuf>,
    /// Report every ordering of the three optimizations (oracle).
    #[arg(long = "all-orders")]
    all_orders: bool,
    #[arg(long = "tol-oracle")]
    tol_oracle: Option<f64>,
    #[arg(long = "tol-submart")]
    tol_submart: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let text = match &cli.spec {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(t) => Some(t),
            Err(e) => {
                eprintln!("error: {}: {e}", path.display());
                return ExitCode::from(2);
            }
        },
        None => None,
    };
    let flags = Flags {
        workers: cli.workers,
        seed: cli.seed,
        n_max: cli.n_max,
        count: cli.count,
        dump_values: cli.dump_values,
        all_orders: cli.all_orders,
        tol_oracle: cli.tol_oracle,
        tol_submart: cli.tol_submart,
    };
    match run_text(cli.command.into(), text.as_deref(), &flags) {
        Ok(report) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&report).expect("serializable report")
            );
            if report.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
