mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Train and evaluate intersection-crossing agents.
#[derive(Parser, Debug)]
#[command(name = "crossing", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML run configuration; defaults are used for anything it omits.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `section.key=value`, applied after the config file (repeatable).
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Root seed; replaces `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one agent and write its log, checkpoints and resolved config.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "runs/train")]
        out_dir: PathBuf,
    },
    /// Greedy evaluation of a checkpoint, reported as JSON.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Episodes to run; defaults to `eval.episodes`.
        #[arg(long)]
        episodes: Option<usize>,
        /// Directory for `eval.json`; printed to stdout when omitted.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run the four paired ablations (replay, dropout, LSTM, weight sharing).
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "runs/ablate")]
        out_dir: PathBuf,
    },
    /// Play one greedy episode and write its per-step trace.
    Rollout {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Trace CSV path; defaults to `<out-dir>/trace.csv`.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Print the header and tensor table of a checkpoint.
    InspectCheckpoint {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { common, out_dir } => commands::train(&common, &out_dir),
        Command::Eval { common, checkpoint, episodes, out_dir } => {
            commands::eval(&common, &checkpoint, episodes, out_dir.as_deref())
        }
        Command::Ablate { common, out_dir } => commands::ablate(&common, &out_dir),
        Command::Rollout { common, checkpoint, trace, out_dir } => {
            let trace = trace.unwrap_or_else(|| out_dir.join("trace.csv"));
            commands::rollout(&common, &checkpoint, &trace)
        }
        Command::InspectCheckpoint { checkpoint, json } => commands::inspect(&checkpoint, json),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
