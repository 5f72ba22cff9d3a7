//! `tcja`: train, evaluate and inspect spiking networks with
//! temporal-channel joint attention.

mod commands;
mod config;
mod error;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Spiking-network trainer with temporal-channel joint attention.
///
/// Exit codes: 0 success, 1 configuration, 2 data, 3 numeric abort,
/// 4 checkpoint or architecture mismatch, 5 no attention blocks.
#[derive(Parser)]
#[command(name = "tcja", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network. Flags: --config FILE, then any configuration field
    /// as --key value (dotted paths such as --train.seed when a name is
    /// ambiguous).
    Train(Flags),
    /// Evaluate a checkpoint on the test set. Flags: --checkpoint FILE,
    /// --config FILE, --predictions FILE, plus configuration overrides.
    Eval(Flags),
    /// Dump temporal, channel and fused attention maps as CSV and PGM.
    /// Flags: --checkpoint FILE, --config FILE, --sample N, --events FILE,
    /// --out DIR, --cell PIXELS, plus configuration overrides.
    InspectAttention(Flags),
    /// Time the attention operators over a grid. Flags: --c LIST, --t LIST,
    /// --k LIST, --reps N, --out FILE.
    Bench(Flags),
    /// Write a synthetic moving-bar dataset. Flags: --out DIR,
    /// --format csv|bin, --config FILE, plus generator fields.
    GenSynthetic(Flags),
}

#[derive(Args)]
struct Flags {
    #[arg(
        value_name = "--KEY VALUE",
        allow_hyphen_values = true,
        trailing_var_arg = true
    )]
    args: Vec<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Train(f) => commands::train_cmd(&f.args),
        Command::Eval(f) => commands::eval_cmd(&f.args),
        Command::InspectAttention(f) => commands::inspect_cmd(&f.args),
        Command::Bench(f) => commands::bench_cmd(&f.args),
        Command::GenSynthetic(f) => commands::gen_synthetic_cmd(&f.args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
