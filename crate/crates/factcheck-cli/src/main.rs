//! Command-line driver. Exit codes: 0 success, 2 input or schema
//! problems, 3 runtime failures, 4 degenerate data.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use factcheck::config::RunConfig;
use factcheck::pipeline;

#[derive(Parser)]
#[command(
    name = "factcheck",
    about = "Joint veracity classification and explanation summarization",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize raw dataset files into canonical record files.
    Prepare(CommonArgs),
    /// Keep each record's evidence sentences most similar to its claim.
    SelectEvidence(CommonArgs),
    /// Train the joint model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint: summaries, labels, and metrics.
    Eval(CommonArgs),
    /// Grid-search config overrides with a resumable ledger.
    Sweep(CommonArgs),
    /// Re-render report files from stored artifacts.
    Report(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override train.seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Override output.dir from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Keep only records with gold summaries during preparation.
    #[arg(long)]
    small_variant: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Continue from the output directory's checkpoint, keeping the step
    /// counter.
    #[arg(long)]
    resume: bool,
}

fn load_config(args: &CommonArgs) -> factcheck::Result<RunConfig> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.train.seed = seed;
    }
    if let Some(out) = &args.out {
        config.output.dir = out.clone();
    }
    if args.small_variant {
        config.dataset.small_variant = true;
    }
    Ok(config)
}

fn emit<T: serde::Serialize>(outcome: &T) -> factcheck::Result<()> {
    use std::io::Write;
    let body = serde_json::to_string_pretty(outcome)
        .map_err(|e| factcheck::Error::runtime(format!("serialize outcome: {e}")))?;
    // A closed pipe (`factcheck eval | head`) is the reader's choice, not a
    // failure; the requested work already happened.
    match writeln!(std::io::stdout(), "{body}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        Err(e) => Err(factcheck::Error::io("stdout", e)),
        Ok(()) => Ok(()),
    }
}

fn run(cli: Cli) -> factcheck::Result<()> {
    match cli.command {
        Command::Prepare(args) => {
            let config = load_config(&args)?;
            emit(&pipeline::cmd_prepare(&config)?)
        }
        Command::SelectEvidence(args) => {
            let config = load_config(&args)?;
            emit(&pipeline::cmd_select_evidence(&config)?)
        }
        Command::Train(args) => {
            let config = load_config(&args.common)?;
            emit(&pipeline::cmd_train(&config, args.resume)?)
        }
        Command::Eval(args) => {
            let config = load_config(&args)?;
            emit(&pipeline::cmd_eval(&config)?)
        }
        Command::Sweep(args) => {
            let config = load_config(&args)?;
            emit(&pipeline::cmd_sweep(&config)?)
        }
        Command::Report(args) => {
            let config = load_config(&args)?;
            emit(&pipeline::cmd_report(&config)?)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
